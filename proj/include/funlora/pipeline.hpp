// Copyright (c) 2026 FunLoRA contributors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "funlora/models.hpp"

namespace funlora {

enum class DataFamily { Gaussian, Rings };

struct StreamSpec {
    int tasks = 5;
    int classes_per_task = 2;
    int train_per_class = 250;
    int test_per_class = 200;
    DataFamily family = DataFamily::Gaussian;
    double radius = 4.0;    // circle of class centers (gaussian) / ring spacing
    double sigma = 0.2;     // per-class spread
    // Gaussian classes are elongated along the tangent of the center circle by
    // this factor, so every class has its own orientation. A conditioning
    // mechanism that can only translate the task-1 field cannot reproduce it.
    double elongation = 8.0;
    std::uint64_t seed = 0;
};

struct TaskData {
    std::vector<int> labels;  // disjoint across tasks
    LabeledData train;
    LabeledData test;
};

struct TaskStream {
    std::vector<TaskData> tasks;
    int total_classes() const;
    std::vector<int> labels_up_to(int t) const;  // union of Y^{1..t}, 1-based t
};

TaskStream make_task_stream(const StreamSpec& spec);

struct ExperimentConfig {
    StreamSpec stream;
    NetConfig net;

    int task1_epochs = 60;
    int incr_epochs = 120;
    double task1_lr = 2e-3;
    double incr_lr = 1e-2;
    std::size_t batch = 128;

    bool ema_enabled = true;
    double ema_decay_task1 = 0.9995;
    double ema_decay_incr = 0.995;
    int ema_start_task1 = 40;  // activation epoch (snapshot once near convergence)
    int ema_start_incr = 80;

    SolverConfig solver;
    double resample_factor = 1.0;

    int classifier_epochs = 240;
    double classifier_lr = 0.05;
    std::size_t classifier_batch = 100;

    std::uint64_t seed = 0;
};

struct MetricsRecord {
    std::vector<double> per_task_accuracy;  // A_t
    std::vector<double> running_aa;         // AA_t
    double la = 0.0;
    double aia = 0.0;
    long ppc = 0;
    long total_nfe = 0;
    std::vector<long> train_samples_per_task;  // generative-training sample counts
    std::vector<double> wall_seconds_per_task;

    nlohmann::json to_json(bool canonical) const;
};

double aa(const std::vector<double>& scores);
double aia(const std::vector<double>& running_aa);
double la(const MetricsRecord& record);

/// Deterministic sub-seed derived from a master seed and a purpose tag.
std::uint64_t seed_for(std::uint64_t master, const std::string& tag);

// ---- checkpoints ---------------------------------------------------------------

nlohmann::json checkpoint_to_json(const VectorFieldNet& net);
VectorFieldNet checkpoint_from_json(const nlohmann::json& doc);

struct AuditViolation {
    std::string parameter_path;
};

/// Asserts bitwise equality of base parameters and of every adapter (and
/// embedding) belonging to classes outside `current_labels` between two
/// checkpoints of the same run.
std::vector<AuditViolation> forgetting_audit(const nlohmann::json& before,
                                             const nlohmann::json& after,
                                             const std::vector<int>& current_labels);

// ---- algorithm 1 -----------------------------------------------------------------

struct RunResult {
    MetricsRecord metrics;
    std::vector<nlohmann::json> task_checkpoints;  // one per completed task
    VectorFieldNet net;
    TaskStream stream;
};

RunResult run_algorithm1(const ExperimentConfig& config);
/// Same pipeline over a caller-supplied stream (permits degenerate T=1 runs).
RunResult run_algorithm1(TaskStream stream, const ExperimentConfig& config);

/// Synthetic dataset for the given classes from a trained net; per-class
/// count = resample_factor * train_per_class. Also returns the realized NFE.
LabeledData sample_synthetic(const VectorFieldNet& net, const std::vector<int>& labels,
                             int per_class, const SolverConfig& solver, std::uint64_t seed,
                             long* nfe_out = nullptr);

struct BoundsResult {
    double multitask_classifier_la = 0.0;
    double multitask_generative_la = 0.0;
    double vanilla_conditioning_la = 0.0;
};

BoundsResult bounds_runs(const ExperimentConfig& config);

}  // namespace funlora
