// Copyright (c) 2026 FunLoRA contributors
// SPDX-License-Identifier: Apache-2.0
//

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "funlora/pipeline.hpp"

using namespace funlora;
using nlohmann::json;

namespace {

ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.stream.tasks = 3;
    cfg.stream.classes_per_task = 1;
    cfg.stream.train_per_class = 40;
    cfg.stream.test_per_class = 20;
    cfg.stream.seed = 5;
    cfg.seed = 5;
    cfg.net.hidden_width = 8;
    cfg.net.hidden_layers = 3;
    cfg.net.time_features = 4;
    cfg.net.kind = FunctionalKind{Kind::Cos, 3, true};
    cfg.task1_epochs = 4;
    cfg.incr_epochs = 4;
    cfg.batch = 20;
    cfg.classifier_epochs = 5;
    cfg.solver.method = SolverMethod::Euler;
    cfg.solver.steps = 8;
    return cfg;
}

}  // namespace

TEST_CASE("make_task_stream") {
    SUBCASE("5x2 gaussian stream has 10 disjoint labels") {
        StreamSpec spec;
        spec.seed = 3;
        TaskStream stream = make_task_stream(spec);
        CHECK(stream.tasks.size() == 5);
        std::set<int> labels;
        for (const auto& t : stream.tasks) {
            CHECK(t.labels.size() == 2);
            for (int y : t.labels) CHECK(labels.insert(y).second);
            CHECK(t.train.labels.size() == 500);
            CHECK(t.test.labels.size() == 400);
            CHECK(t.train.x.rows() == 500);
            CHECK(t.train.x.cols() == 2);
        }
        CHECK(labels.size() == 10);
        CHECK(stream.total_classes() == 10);
        CHECK(stream.labels_up_to(2) == std::vector<int>{0, 1, 2, 3});
    }
    SUBCASE("ring family is separable by a nearest-centroid oracle") {
        StreamSpec spec;
        spec.family = DataFamily::Rings;
        spec.tasks = 2;
        spec.classes_per_task = 2;
        spec.sigma = 0.05;
        spec.seed = 9;
        TaskStream stream = make_task_stream(spec);
        // centroid rule on the radius coordinate
        std::map<int, double> mean_radius;
        for (const auto& task : stream.tasks)
            for (std::size_t i = 0; i < task.train.labels.size(); ++i) {
                const double r = std::hypot(task.train.x.at(i, 0), task.train.x.at(i, 1));
                mean_radius[task.train.labels[i]] += r / spec.train_per_class;
            }
        int correct = 0, total = 0;
        for (const auto& task : stream.tasks)
            for (std::size_t i = 0; i < task.test.labels.size(); ++i) {
                const double r = std::hypot(task.test.x.at(i, 0), task.test.x.at(i, 1));
                int best = -1;
                double best_d = 1e300;
                for (const auto& [y, mr] : mean_radius)
                    if (std::fabs(r - mr) < best_d) best_d = std::fabs(r - mr), best = y;
                correct += best == task.test.labels[i];
                ++total;
            }
        CHECK(100.0 * correct / total > 95.0);
    }
    SUBCASE("seed changes draws but not shapes") {
        StreamSpec a, b;
        a.seed = 1;
        b.seed = 2;
        TaskStream sa = make_task_stream(a), sb = make_task_stream(b);
        CHECK(sa.tasks[0].train.x.shape() == sb.tasks[0].train.x.shape());
        CHECK(sa.tasks[0].train.x.data() != sb.tasks[0].train.x.data());
    }
    SUBCASE("fewer than two tasks is rejected") {
        StreamSpec spec;
        spec.tasks = 1;
        CHECK_THROWS_AS(make_task_stream(spec), std::invalid_argument);
    }
}

TEST_CASE("metric formulas") {
    CHECK(aa({100.0, 50.0}) == doctest::Approx(75.0));
    CHECK(aia({100.0, 75.0}) == doctest::Approx(87.5));
    SUBCASE("single task collapses all three") {
        MetricsRecord m;
        m.per_task_accuracy = {83.0};
        m.running_aa = {aa(m.per_task_accuracy)};
        CHECK(aa(m.per_task_accuracy) == 83.0);
        CHECK(aia(m.running_aa) == 83.0);
        CHECK(la(m) == 83.0);
    }
    CHECK_THROWS(aa({}));
    CHECK_THROWS(aia({}));
}

TEST_CASE("seed_for fan-out") {
    CHECK(seed_for(1, "a") == seed_for(1, "a"));
    CHECK(seed_for(1, "a") != seed_for(1, "b"));
    CHECK(seed_for(1, "a") != seed_for(2, "a"));
}

TEST_CASE("checkpoint round trip") {
    NetConfig cfg;
    cfg.hidden_width = 8;
    cfg.hidden_layers = 3;
    cfg.time_features = 4;
    cfg.kind = FunctionalKind{Kind::Cos, 3, true};
    VectorFieldNet net(cfg, 44);
    net.add_embedding_class(0, 1);
    net.add_adapter_class(2, 9);
    net.store().freeze_class(2);
    json doc = checkpoint_to_json(net);
    VectorFieldNet back = checkpoint_from_json(doc);
    CHECK(checkpoint_to_json(back) == doc);
    CHECK(back.store().is_frozen(2));
    SUBCASE("version mismatch is rejected") {
        json bad = doc;
        bad["format_version"] = 999;
        CHECK_THROWS(checkpoint_from_json(bad));
    }
}

TEST_CASE("forgetting audit") {
    NetConfig cfg;
    cfg.hidden_width = 8;
    cfg.hidden_layers = 3;
    cfg.time_features = 4;
    cfg.kind = FunctionalKind{Kind::Cos, 3, false};
    VectorFieldNet net(cfg, 44);
    net.add_embedding_class(0, 1);
    net.add_adapter_class(1, 9);
    json before = checkpoint_to_json(net);

    SUBCASE("identical checkpoints pass") {
        CHECK(forgetting_audit(before, before, {2}).empty());
    }
    SUBCASE("perturbed base weight yields exactly one violation") {
        json after = before;
        after["layers"][0]["W"]["data"][0] =
            after["layers"][0]["W"]["data"][0].get<double>() + 1e-9;
        auto violations = forgetting_audit(before, after, {2});
        REQUIRE(violations.size() == 1);
        CHECK(violations[0].parameter_path == "layers/0/W");
    }
    SUBCASE("changes to the current task's adapters are allowed") {
        json after = before;
        for (auto& aj : after["adapters"])
            if (aj["class"].get<int>() == 1) aj["A"]["data"][0] = 123.0;
        CHECK(forgetting_audit(before, after, {1}).empty());
        CHECK_FALSE(forgetting_audit(before, after, {2}).empty());
    }
}

TEST_CASE("run_algorithm1") {
    ExperimentConfig cfg = tiny_config();
    RunResult run = run_algorithm1(cfg);

    SUBCASE("metrics structure") {
        CHECK(run.metrics.per_task_accuracy.size() == 3);
        CHECK(run.metrics.running_aa.size() == 3);
        CHECK(run.metrics.la == run.metrics.running_aa.back());
        CHECK(run.task_checkpoints.size() == 3);
    }
    SUBCASE("aa and aia recomputed from stored A_t match the live values") {
        CHECK(aa(run.metrics.per_task_accuracy) == run.metrics.running_aa.back());
        CHECK(aia(run.metrics.running_aa) == run.metrics.aia);
    }
    SUBCASE("generative-training sample count is constant across tasks") {
        for (long n : run.metrics.train_samples_per_task)
            CHECK(n == run.metrics.train_samples_per_task[0]);
    }
    SUBCASE("zero forgetting across consecutive checkpoints") {
        for (std::size_t t = 1; t < run.task_checkpoints.size(); ++t) {
            auto violations =
                forgetting_audit(run.task_checkpoints[t - 1], run.task_checkpoints[t],
                                 run.stream.tasks[t].labels);
            CHECK(violations.empty());
        }
    }
    SUBCASE("bit-identical rerun") {
        RunResult again = run_algorithm1(cfg);
        CHECK(run.metrics.to_json(true).dump() == again.metrics.to_json(true).dump());
        CHECK(run.task_checkpoints.back().dump() ==
              again.task_checkpoints.back().dump());
    }
    SUBCASE("canonical json omits wall times") {
        json canon = run.metrics.to_json(true);
        json full = run.metrics.to_json(false);
        CHECK_FALSE(canon.contains("wall_seconds_per_task"));
        CHECK(full.contains("wall_seconds_per_task"));
        CHECK(canon.at("schema_version").get<int>() == 1);
    }
}

TEST_CASE("degenerate single-task stream reduces to supervised training") {
    ExperimentConfig cfg = tiny_config();
    StreamSpec one_task = cfg.stream;
    TaskStream full = make_task_stream(one_task);
    TaskStream single;
    single.tasks.push_back(full.tasks[0]);
    RunResult run = run_algorithm1(single, cfg);
    CHECK(run.metrics.per_task_accuracy.size() == 1);
    CHECK(run.metrics.running_aa[0] == run.metrics.per_task_accuracy[0]);
    CHECK(run.metrics.la == run.metrics.per_task_accuracy[0]);
    CHECK(run.metrics.aia == run.metrics.per_task_accuracy[0]);
}

TEST_CASE("synthetic datasets cover exactly the seen labels with equal counts") {
    ExperimentConfig cfg = tiny_config();
    RunResult run = run_algorithm1(cfg);
    const auto labels = run.stream.labels_up_to(3);
    long nfe = 0;
    LabeledData synthetic =
        sample_synthetic(run.net, labels, 15, cfg.solver, 99, &nfe);
    CHECK(nfe > 0);
    std::map<int, int> counts;
    for (int y : synthetic.labels) ++counts[y];
    CHECK(counts.size() == labels.size());
    for (int y : labels) CHECK(counts[y] == 15);
}

TEST_CASE("zero-epoch incremental phases keep adapted weights at identity") {
    ExperimentConfig cfg = tiny_config();
    cfg.incr_epochs = 0;
    RunResult run = run_algorithm1(cfg);
    // classes of tasks 2 and 3 hold calibrated, untrained adapters
    for (int y : {1, 2})
        for (int l : run.net.adapted_layers()) {
            Tensor weff = run.net.effective_weight(l, y);
            const auto& w0 = run.net.layers()[static_cast<std::size_t>(l)].W;
            for (std::size_t i = 0; i < weff.size(); ++i)
                CHECK(std::fabs(weff.data()[i] - w0.data()[i]) < 1e-9);
        }
}

TEST_CASE("bounds_runs produces all three scores on the shared stream") {
    ExperimentConfig cfg = tiny_config();
    cfg.task1_epochs = 3;
    BoundsResult b = bounds_runs(cfg);
    for (double v : {b.multitask_classifier_la, b.multitask_generative_la,
                     b.vanilla_conditioning_la}) {
        CHECK(v >= 0.0);
        CHECK(v <= 100.0);
    }
}
