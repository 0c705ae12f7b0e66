#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "letac/dataset.hpp"
#include "letac/rng.hpp"
#include "letac/sim.hpp"

namespace {

using letac::CollectConfig;
using letac::DatasetSample;
using letac::ObjectModel;
using letac::RegressionFit;
using letac::Rng;
using letac::TrialFrame;
using letac::TrialRecord;

TrialRecord labeled_trial(int id, double F_ext, double p_slip) {
  TrialRecord tr;
  tr.trial_id = id;
  tr.material = "rigid";
  tr.F_ext = F_ext;
  tr.p_slip = p_slip;
  tr.labeled = true;
  return tr;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<DatasetSample> random_samples(Rng& rng, int n) {
  std::vector<DatasetSample> out;
  for (int i = 0; i < n; ++i) {
    DatasetSample s;
    s.trial_id = i;
    s.material = i % 2 == 0 ? "rigid" : "gel";
    s.frame = i;
    s.t = rng.uniform(0.0, 10.0);
    letac::TactileObservation o;
    o.c = rng.uniform(0.0, 1700.0);
    o.d = rng.uniform(0.0, 150.0);
    o.depth_mean = rng.uniform(0.0, 2.0);
    o.depth_max = rng.uniform(0.0, 5.0);
    o.texture_energy = rng.uniform(0.0, 1.0);
    o.extra.resize(3);
    for (int k = 0; k < 3; ++k) o.extra(k) = rng.normal();
    s.obs = o;
    s.p_n = rng.uniform(0.0, 70.0);
    s.v_n = rng.uniform(-1.0, 1.0);
    s.p_slip = rng.uniform(5.0, 40.0);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST(RegressionFill, RecoversExactLineAndFillsUnlabeled) {
  const double slope = -0.85;
  const double intercept = 29.6;
  std::vector<TrialRecord> trials;
  for (int i = 0; i < 6; ++i) {
    const double F = 0.5 + 0.9 * i;
    trials.push_back(labeled_trial(i, F, intercept + slope * F));
  }
  TrialRecord unl;
  unl.trial_id = 99;
  unl.F_ext = 2.34;
  trials.push_back(unl);
  TrialRecord degen;
  degen.trial_id = 100;
  degen.degenerate = true;
  trials.push_back(degen);

  const RegressionFit fit = letac::regression_fill(trials);
  EXPECT_NEAR(fit.slope, slope, 1e-12);
  EXPECT_NEAR(fit.intercept, intercept, 1e-12);
  EXPECT_NEAR(fit.r2, 1.0, 1e-12);
  EXPECT_EQ(fit.n_points, 6);
  // The unlabeled trial now carries the fitted label.
  EXPECT_TRUE(trials[6].labeled);
  EXPECT_NEAR(trials[6].p_slip, intercept + slope * 2.34, 1e-12);
  // Degenerate trials stay untouched.
  EXPECT_FALSE(trials[7].labeled);
}

TEST(RegressionFill, RejectsUnderdeterminedInput) {
  std::vector<TrialRecord> one{labeled_trial(0, 1.0, 25.0)};
  EXPECT_THROW(letac::regression_fill(one), std::runtime_error);
  // Identical loads give zero spread.
  std::vector<TrialRecord> flat{labeled_trial(0, 2.0, 25.0),
                                labeled_trial(1, 2.0, 24.0)};
  EXPECT_THROW(letac::regression_fill(flat), std::runtime_error);
}

TEST(RunTrial, LabelsSlipOnsetWidth) {
  const ObjectModel m = letac::make_material("rigid");
  Rng rng(2024);
  const CollectConfig cfg;
  int labeled_seen = 0;
  for (int i = 0; i < 20 && labeled_seen < 5; ++i) {
    const TrialRecord tr = letac::run_trial(m, cfg.impedance_stiffness, rng, cfg);
    if (tr.degenerate || !tr.labeled) continue;
    ++labeled_seen;
    ASSERT_GE(tr.slip_frame, 0);
    ASSERT_LT(static_cast<std::size_t>(tr.slip_frame), tr.frames.size());
    // The label is the width at the first slipping frame.
    EXPECT_DOUBLE_EQ(tr.p_slip, tr.frames[static_cast<std::size_t>(tr.slip_frame)].p);
    EXPECT_TRUE(tr.frames[static_cast<std::size_t>(tr.slip_frame)].slipping);
    for (int k = 0; k < tr.slip_frame; ++k) {
      EXPECT_FALSE(tr.frames[static_cast<std::size_t>(k)].slipping);
    }
    // Recording stops shortly after onset.
    const int post = static_cast<int>(std::lround(cfg.post_slip_time * cfg.frame_rate));
    EXPECT_LE(tr.frames.size(),
              static_cast<std::size_t>(tr.slip_frame + post + 1));
    // Slip width must shrink with load along the Coulomb line.
    EXPECT_LT(tr.p_slip, m.width_0);
  }
  EXPECT_GE(labeled_seen, 5);
}

TEST(CollectDataset, PerMaterialCoulombLinearity) {
  const CollectConfig cfg;
  const letac::CollectResult res = letac::collect_dataset(cfg, 11);
  ASSERT_EQ(res.per_material.size(), 4u);
  for (const letac::MaterialCollection& mc : res.per_material) {
    const ObjectModel m = letac::make_material(mc.material);
    EXPECT_GE(mc.fit.r2, 0.95) << mc.material;
    EXPECT_LT(mc.fit.slope, 0.0) << mc.material;
    EXPECT_NEAR(mc.fit.intercept, m.width_0, 1.0) << mc.material;
    // The theoretical slope is -1 / (mu * stiffness).
    const double slope_theory = -1.0 / (m.mu * m.stiffness);
    EXPECT_NEAR(mc.fit.slope, slope_theory, 0.25 * std::abs(slope_theory))
        << mc.material;
  }
  EXPECT_FALSE(res.dataset.train.empty());
  EXPECT_FALSE(res.dataset.val.empty());
}

TEST(CollectDataset, DeterministicInMasterSeed) {
  CollectConfig cfg;
  cfg.trials_per_material = 12;
  cfg.no_contact_samples = 50;
  const letac::CollectResult a = letac::collect_dataset(cfg, 5);
  const letac::CollectResult b = letac::collect_dataset(cfg, 5);
  ASSERT_EQ(a.dataset.train.size(), b.dataset.train.size());
  ASSERT_EQ(a.dataset.val.size(), b.dataset.val.size());
  for (std::size_t i = 0; i < a.dataset.train.size(); ++i) {
    const DatasetSample& sa = a.dataset.train[i];
    const DatasetSample& sb = b.dataset.train[i];
    EXPECT_EQ(sa.trial_id, sb.trial_id);
    EXPECT_EQ(sa.p_slip, sb.p_slip);
    EXPECT_EQ((sa.obs.to_vector() - sb.obs.to_vector()).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(AssembleDataset, SplitsByTrialWithSharedLabels) {
  std::vector<TrialRecord> trials;
  Rng rng(77);
  for (int id = 0; id < 10; ++id) {
    TrialRecord tr = labeled_trial(id, 1.0 + id, 25.0 - 0.3 * id);
    for (int k = 0; k < 8; ++k) {
      TrialFrame fr;
      fr.t = k * 0.1;
      fr.p = 30.0 - k;
      fr.obs.extra = Eigen::VectorXd::Zero(3);
      tr.frames.push_back(fr);
    }
    trials.push_back(std::move(tr));
  }
  const letac::Dataset ds = letac::assemble_dataset(trials, {}, rng, 0.8);
  EXPECT_EQ(ds.train.size() + ds.val.size(), 80u);
  std::set<int> train_ids, val_ids;
  for (const DatasetSample& s : ds.train) {
    train_ids.insert(s.trial_id);
    EXPECT_GT(s.v_n, -1.0);
    EXPECT_LT(s.v_n, 1.0);
  }
  for (const DatasetSample& s : ds.val) val_ids.insert(s.trial_id);
  for (int id : train_ids) EXPECT_EQ(val_ids.count(id), 0u) << id;
  EXPECT_EQ(train_ids.size(), 8u);
  EXPECT_EQ(val_ids.size(), 2u);

  // Unlabeled trials are rejected outright.
  std::vector<TrialRecord> bad{TrialRecord{}};
  bad[0].frames.push_back(TrialFrame{});
  EXPECT_THROW(letac::assemble_dataset(bad, {}, rng, 0.8), std::invalid_argument);
}

TEST(SamplesCsv, RoundTripIsExactAndRewriteIsByteIdentical) {
  Rng rng(0xc5fULL);
  const std::vector<DatasetSample> samples = random_samples(rng, 40);
  const std::string path_a = "test_samples_a.csv";
  const std::string path_b = "test_samples_b.csv";
  letac::save_samples_csv(path_a, samples);
  const std::vector<DatasetSample> loaded = letac::load_samples_csv(path_a);
  ASSERT_EQ(loaded.size(), samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(loaded[i].trial_id, samples[i].trial_id);
    EXPECT_EQ(loaded[i].material, samples[i].material);
    EXPECT_EQ(loaded[i].frame, samples[i].frame);
    // %.17g strings recover the exact double.
    EXPECT_EQ(loaded[i].t, samples[i].t);
    EXPECT_EQ(loaded[i].p_n, samples[i].p_n);
    EXPECT_EQ(loaded[i].v_n, samples[i].v_n);
    EXPECT_EQ(loaded[i].p_slip, samples[i].p_slip);
    EXPECT_EQ((loaded[i].obs.to_vector() - samples[i].obs.to_vector())
                  .cwiseAbs()
                  .maxCoeff(),
              0.0);
  }
  letac::save_samples_csv(path_b, loaded);
  EXPECT_EQ(read_file(path_a), read_file(path_b));
  std::remove(path_a.c_str());
  std::remove(path_b.c_str());
}

TEST(SamplesCsv, RejectsMissingFileAndBadHeader) {
  EXPECT_THROW(letac::load_samples_csv("does_not_exist.csv"), std::runtime_error);
  const std::string path = "test_bad_header.csv";
  {
    std::ofstream out(path);
    out << "trial_id,material,frame,t,obs_0,obs_1,p_n,v_n,p_slip\n";
    out << "0,rigid,0,0,1,2,3,4,5\n";
  }
  // Fewer observation columns than the named channels is malformed.
  EXPECT_THROW(letac::load_samples_csv(path), std::runtime_error);
  std::remove(path.c_str());
}
