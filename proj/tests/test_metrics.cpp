#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <set>

#include "doctest.h"
#include "neuroforge/errors.hpp"
#include "neuroforge/metrics.hpp"
#include "neuroforge/rng.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace nf;

namespace {

// all 5-neuron universe subsets, as bitmasks
std::vector<NeuronId> universe5() {
    return {{1, 0}, {1, 1}, {2, 0}, {2, 1}, {3, 0}};
}

std::vector<NeuronId> pick(const std::vector<NeuronId>& u, unsigned mask) {
    std::vector<NeuronId> out;
    for (std::size_t i = 0; i < u.size(); ++i)
        if (mask & (1u << i)) out.push_back(u[i]);
    return out;
}

std::vector<double> random_rc(std::size_t n, Rng& rng) {
    std::vector<double> rc(n);
    double sum = 0.0;
    for (double& v : rc) {
        v = rng.uniform() + 1e-3;
        sum += v;
    }
    for (double& v : rc) v /= sum;
    return rc;
}

}  // namespace

TEST_CASE("weighted jaccard matches exhaustive enumeration on 5-neuron universes") {
    const std::vector<NeuronId> u = universe5();
    Rng rng(42);
    for (unsigned fmask = 1; fmask < 32; ++fmask) {
        SubNetwork fault;
        fault.members = pick(u, fmask);
        for (int rep = 0; rep < 3; ++rep) {
            std::vector<double> rc = random_rc(fault.members.size(), rng);
            for (unsigned lmask = 0; lmask < 32; ++lmask) {
                const std::vector<NeuronId> localized = pick(u, lmask);
                const double got = wji(fault, rc, localized);
                const double want = oracle::wji_enumerated(fault.members, rc, localized);
                CHECK(std::abs(got - want) <= 1e-9);
            }
        }
    }
}

TEST_CASE("weighted jaccard boundary cases") {
    const std::vector<NeuronId> u = universe5();
    SubNetwork fault;
    fault.members = u;
    const std::vector<double> rc = {0.1, 0.2, 0.3, 0.25, 0.15};

    CHECK(wji(fault, rc, u) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<NeuronId> disjoint = {{1, 9}, {2, 9}};
    CHECK(wji(fault, rc, disjoint) == 0.0);
}

TEST_CASE("uniform rc weighted jaccard equals classic jaccard") {
    Rng rng(7);
    std::vector<NeuronId> pool;
    for (int l = 1; l <= 3; ++l)
        for (int c = 0; c < 8; ++c) pool.push_back({l, c});

    for (int rep = 0; rep < 100; ++rep) {
        SubNetwork fault;
        std::set<int> fidx;
        const int fn = 1 + rng.uniform_int(6);
        while (static_cast<int>(fidx.size()) < fn) fidx.insert(rng.uniform_int(static_cast<int>(pool.size())));
        for (int i : fidx) fault.members.push_back(pool[static_cast<std::size_t>(i)]);

        std::vector<NeuronId> loc;
        std::set<int> lidx;
        const int ln = rng.uniform_int(8);
        while (static_cast<int>(lidx.size()) < ln) lidx.insert(rng.uniform_int(static_cast<int>(pool.size())));
        for (int i : lidx) loc.push_back(pool[static_cast<std::size_t>(i)]);

        const std::vector<double> rc(fault.members.size(), 1.0 / static_cast<double>(fault.members.size()));
        std::set<NeuronId> f(fault.members.begin(), fault.members.end());
        std::set<NeuronId> l(loc.begin(), loc.end());
        std::set<NeuronId> un = f;
        un.insert(l.begin(), l.end());
        int inter = 0;
        for (const NeuronId& id : f) inter += l.count(id) ? 1 : 0;
        const double classic = un.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(un.size());

        CHECK(std::abs(wji(fault, rc, loc) - classic) <= 1e-9);
    }
}

TEST_CASE("weighted jaccard validates rc alignment") {
    SubNetwork fault;
    fault.members = {{1, 0}, {2, 0}};
    std::vector<double> rc = {1.0};
    CHECK_THROWS_AS(wji(fault, rc, {}), RejectedInput);
}

TEST_CASE("asr counts only non-target originals and ca counts all") {
    const Dataset& d = fixtures::tiny_data();
    const Model& m = fixtures::trained_model();

    TriggerSpec trig = make_patch_trigger(d.channels);
    PoisonPolicy policy;
    const int target = 1;
    PoisonedTestSet pt = poison_test_set(d, policy, trig);

    int non_target = 0;
    for (int lbl : d.test.labels)
        if (lbl != policy.target) ++non_target;
    // poison_test_set uses policy.target = 0 by default
    CHECK(pt.count() == non_target);

    EvalReport rep = eval_ca_asr(m, d.test, pt, policy.target);
    CHECK(rep.clean_count == static_cast<int>(d.test.labels.size()));
    CHECK(rep.poisoned_count == non_target);
    CHECK(rep.ca == doctest::Approx(static_cast<double>(rep.clean_correct) / rep.clean_count));
    CHECK(rep.asr == doctest::Approx(static_cast<double>(rep.poisoned_hit) / rep.poisoned_count));
    (void)target;
}

TEST_CASE("constant-target classifier scores asr one") {
    const Dataset& d = fixtures::tiny_data();
    Model m = fixtures::fresh_model(2);
    const int target = 0;
    // bias the head so the target logit always dominates
    const auto hi = static_cast<std::size_t>(m.head_index());
    for (std::size_t i = 0; i < m.weights[hi].numel(); ++i) m.weights[hi][i] = 0.0f;
    for (int c = 0; c < d.classes; ++c) m.biases[hi][static_cast<std::size_t>(c)] = c == target ? 10.0f : 0.0f;

    PoisonPolicy policy;
    PoisonedTestSet pt = poison_test_set(d, policy, make_patch_trigger(d.channels));
    EvalReport rep = eval_ca_asr(m, d.test, pt, target);
    CHECK(rep.asr == doctest::Approx(1.0));

    int target_share = 0;
    for (int lbl : d.test.labels)
        if (lbl == target) ++target_share;
    CHECK(rep.ca == doctest::Approx(static_cast<double>(target_share) / d.test.labels.size()));
}

TEST_CASE("cad and asrd are signed drops") {
    EvalReport before, after;
    before.ca = 0.9;
    before.asr = 0.8;
    after.ca = 0.95;
    after.asr = 0.1;
    auto [cad, asrd] = cad_asrd(before, after);
    CHECK(cad == doctest::Approx(-0.05));
    CHECK(asrd == doctest::Approx(0.7));
}

TEST_CASE("correlation report masks the set and its complement") {
    const Dataset& d = fixtures::tiny_data();
    const Model& m = fixtures::trained_model();
    SubNetwork sn;
    sn.members = {{1, 0}, {2, 0}, {3, 0}};

    PoisonPolicy policy;
    PoisonedTestSet pt = poison_test_set(d, policy, make_patch_trigger(d.channels));
    EvalReport base = eval_ca_asr(m, d.test, pt, policy.target);
    CorrelationReport cor = correlation_report(m, sn, d.test, pt, policy.target);

    Model masked_i = mask_channels(m, sn);
    EvalReport rep_i = eval_ca_asr(masked_i, d.test, pt, policy.target);
    CHECK(cor.asr_cor_i == doctest::Approx(base.asr - rep_i.asr));
    CHECK(cor.ca_cor_i == doctest::Approx(base.ca - rep_i.ca));

    std::vector<NeuronId> complement;
    for (const NeuronId& id : m.all_body_neurons())
        if (!sn.contains(id)) complement.push_back(id);
    Model masked_r = mask_channels(m, std::span<const NeuronId>(complement));
    EvalReport rep_r = eval_ca_asr(masked_r, d.test, pt, policy.target);
    CHECK(cor.asr_cor_r == doctest::Approx(base.asr - rep_r.asr));
    CHECK(cor.ca_cor_r == doctest::Approx(base.ca - rep_r.ca));
}

TEST_CASE("predict is batch-size invariant") {
    const Dataset& d = fixtures::tiny_data();
    const Model& m = fixtures::trained_model();
    std::vector<int> a = predict(m, d.test.images, 64);
    std::vector<int> b = predict(m, d.test.images, 7);
    CHECK(a == b);
}
