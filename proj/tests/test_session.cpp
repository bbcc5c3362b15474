#include <gtest/gtest.h>

#include "pcal/datasets.hpp"
#include "pcal/error.hpp"
#include "pcal/session.hpp"

using namespace pcal;
using namespace pcal::session;

namespace {

SessionConfig fast_config() {
  SessionConfig c;
  c.train.epochs_per_round = 3;
  c.train.rng_seed = 11;
  c.train.sigma_sample_pairs = 2000;
  return c;
}

const LabeledCloud& chair() {
  static const auto s = data::generate_shape({data::Family::Chair, 3, 0.01, 256, 21});
  return s;
}

PointId first_of(const LabelMap& truth, int c, std::size_t skip = 0) {
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth.labels[i] == c && skip-- == 0) return PointId(i);
  }
  return 0;
}

std::vector<Assignment> one_seed_each(const LabelMap& truth) {
  std::vector<Assignment> out;
  for (int c = 0; c < truth.num_classes; ++c) out.push_back({first_of(truth, c), c});
  return out;
}

SessionState seeded() {
  const auto s = create_session(chair().cloud, 3, nullptr, fast_config(), "t");
  return submit_seeds(s, one_seed_each(chair().labels), 100);
}

SessionState reviewing() { return train_and_predict(seeded()); }

// Label that the given point does not currently carry.
int other_class(const SessionState& s, PointId p) { return (s.labels.labels[p] + 1) % s.labels.num_classes; }

}  // namespace

TEST(CreateSession, StartsInSeedingUnlabeled) {
  const auto s = create_session(chair().cloud, 3, nullptr, fast_config(), "a");
  EXPECT_EQ(s.phase, Phase::Seeding);
  EXPECT_EQ(s.round, 0);
  EXPECT_EQ(s.labels.labeled_count(), 0u);
  EXPECT_TRUE(s.cloud->normals.has_value());
  EXPECT_EQ(s.model->num_classes, 3);
  EXPECT_EQ(s.events.size(), 1u);
}

TEST(CreateSession, ResizesBaseModelHead) {
  const auto base = std::make_shared<const nnet::ModelParams>(nnet::init_or_resize_head(nullptr, 2, 5));
  const auto s = create_session(chair().cloud, 3, base, fast_config(), "b");
  EXPECT_EQ(s.model->num_classes, 3);
  for (std::size_t k = 0; k < nnet::kSlotCount; ++k) {
    if (!nnet::is_head(nnet::Slot(k))) EXPECT_EQ(s.model->tensors[k], base->tensors[k]);
  }
  const auto same = create_session(chair().cloud, 2, base, fast_config(), "c");
  EXPECT_EQ(*same.model, *base);
}

TEST(CreateSession, Errors) {
  EXPECT_THROW(create_session(chair().cloud, 1, nullptr, fast_config(), "x"), InvalidParameter);
  PointCloud tiny;
  tiny.positions = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  EXPECT_THROW(create_session(tiny, 2, nullptr, fast_config(), "x"), InvalidParameter);
}

TEST(SubmitSeeds, CountsClicksAndGrows) {
  const auto s = seeded();
  EXPECT_EQ(s.phase, Phase::Growing);
  ASSERT_EQ(s.clicks.size(), 3u);
  for (const auto& c : s.clicks) {
    EXPECT_EQ(c.kind, ClickKind::Seed);
    EXPECT_EQ(c.timestamp_ms, 100);
  }
  std::size_t seeds = 0, grown = 0;
  for (auto p : s.labels.provenance) {
    seeds += p == Provenance::Seed;
    grown += p == Provenance::Grown;
  }
  EXPECT_EQ(seeds, 3u);
  EXPECT_GT(grown, 0u);
}

TEST(SubmitSeeds, Errors) {
  const auto s = create_session(chair().cloud, 3, nullptr, fast_config(), "e");
  const auto& truth = chair().labels;
  EXPECT_THROW(submit_seeds(s, {{first_of(truth, 0), 0}, {first_of(truth, 2), 2}}, 0), InvalidParameter);
  auto dup = one_seed_each(truth);
  dup.push_back({dup[0].point, 1});
  EXPECT_THROW(submit_seeds(s, dup, 0), InvalidParameter);
  auto oob = one_seed_each(truth);
  oob.push_back({PointId(truth.size()), 0});
  EXPECT_THROW(submit_seeds(s, oob, 0), InvalidParameter);
  auto bad_class = one_seed_each(truth);
  bad_class.push_back({5, 3});
  EXPECT_THROW(submit_seeds(s, bad_class, 0), InvalidParameter);
  EXPECT_THROW(submit_seeds(s, {}, 0), InvalidParameter);
  // wrong phase
  EXPECT_THROW(submit_seeds(seeded(), one_seed_each(truth), 0), StateError);
}

TEST(Train, PredictsEverythingKeepsSeeds) {
  const auto before = seeded();
  const auto s = train_and_predict(before);
  EXPECT_EQ(s.phase, Phase::Reviewing);
  EXPECT_EQ(s.round, 1);
  EXPECT_TRUE(s.labels.is_full());
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    if (before.labels.provenance[i] == Provenance::Seed) {
      EXPECT_EQ(s.labels.provenance[i], Provenance::Seed);
      EXPECT_EQ(s.labels.labels[i], before.labels.labels[i]);
    } else {
      EXPECT_EQ(s.labels.provenance[i], Provenance::Predicted);
    }
  }
  EXPECT_EQ(s.clicks, before.clicks);
}

TEST(Train, TwiceInARowAdvancesRound) {
  const auto s = train_and_predict(reviewing());
  EXPECT_EQ(s.round, 2);
  EXPECT_EQ(s.phase, Phase::Reviewing);
}

TEST(Train, NotFromSeedingOrFinalized) {
  const auto s = create_session(chair().cloud, 3, nullptr, fast_config(), "t");
  EXPECT_THROW(train_and_predict(s), StateError);
}

TEST(Train, BusyWhileTraining) {
  const auto r = reviewing();
  const auto t = begin_training(r);
  EXPECT_EQ(t.phase, Phase::Training);
  EXPECT_THROW(submit_corrections(t, {{0, 0, false}}, 0), BusyError);
  EXPECT_THROW(finalize(t), BusyError);
  EXPECT_THROW(begin_training(t), BusyError);
  const auto back = abort_training(t, Phase::Reviewing);
  EXPECT_EQ(back.phase, Phase::Reviewing);
  EXPECT_EQ(back.labels, r.labels);
}

TEST(Corrections, CountClicksAndSetProvenance) {
  const auto r = reviewing();
  std::vector<Correction> cs;
  for (PointId p = 0; cs.size() < 5; ++p) {
    if (r.labels.provenance[p] == Provenance::Predicted) cs.push_back({p, other_class(r, p), false});
  }
  const auto s = submit_corrections(r, cs, 200);
  EXPECT_EQ(s.clicks.size(), r.clicks.size() + 5);
  EXPECT_EQ(s.phase, Phase::Reviewing);
  for (const auto& c : cs) {
    EXPECT_EQ(s.labels.labels[c.point], c.class_id);
    EXPECT_EQ(s.labels.provenance[c.point], Provenance::Corrected);
  }
  EXPECT_EQ(s.clicks.back().kind, ClickKind::Correction);
  EXPECT_EQ(s.clicks.back().round, 1);
}

TEST(Corrections, SeedRules) {
  const auto r = reviewing();
  const PointId seed = r.clicks[0].point;
  const int cls = r.clicks[0].class_id;
  // same class: accepted, label unchanged, still a click
  const auto s = submit_corrections(r, {{seed, cls, false}}, 0);
  EXPECT_EQ(s.labels, r.labels);
  EXPECT_EQ(s.clicks.size(), r.clicks.size() + 1);
  // other class: rejected
  EXPECT_THROW(submit_corrections(r, {{seed, (cls + 1) % 3, false}}, 0), InvalidParameter);
}

TEST(Corrections, ErrorsLeaveStateUntouched) {
  const auto r = reviewing();
  const auto copy = r;
  EXPECT_THROW(submit_corrections(r, {}, 0), InvalidParameter);
  EXPECT_THROW(submit_corrections(r, {{PointId(r.labels.size()), 0, false}}, 0), InvalidParameter);
  EXPECT_THROW(submit_corrections(r, {{3, 0, false}, {3, 1, false}}, 0), InvalidParameter);
  EXPECT_THROW(submit_corrections(seeded(), {{3, 0, false}}, 0), StateError);
  EXPECT_EQ(r.labels, copy.labels);
  EXPECT_EQ(r.clicks, copy.clicks);
}

TEST(Corrections, GrowFlagIsStillOneClick) {
  const auto r = reviewing();
  PointId p = 0;
  while (r.labels.provenance[p] != Provenance::Predicted) ++p;
  const auto s = submit_corrections(r, {{p, other_class(r, p), true}}, 0);
  EXPECT_EQ(s.clicks.size(), r.clicks.size() + 1);
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    // growth only claims predicted points
    if (s.labels.provenance[i] == Provenance::Grown) EXPECT_EQ(r.labels.provenance[i], Provenance::Predicted);
  }
}

TEST(Finalize, RetrainsAndFreezes) {
  const auto r = reviewing();
  const auto f = finalize(r);
  EXPECT_EQ(f.phase, Phase::Finalized);
  EXPECT_EQ(f.labels, r.labels);
  EXPECT_NE(*f.model, *r.model);
  EXPECT_THROW(finalize(f), StateError);
  EXPECT_THROW(train_and_predict(f), StateError);
  EXPECT_THROW(submit_corrections(f, {{0, 0, false}}, 0), StateError);
}

TEST(Finalize, WrongPhases) {
  const auto s = create_session(chair().cloud, 3, nullptr, fast_config(), "t");
  EXPECT_THROW(finalize(s), StateError);
  EXPECT_THROW(finalize(seeded()), StateError);
}

TEST(Finalize, NextSessionStartsFromRetrainedModel) {
  const auto f = finalize(reviewing());
  const auto next = create_session(chair().cloud, 3, f.model, fast_config(), "next");
  EXPECT_EQ(*next.model, *f.model);
}

TEST(EventLog, ReplayReproducesState) {
  auto s = reviewing();
  PointId p = 0;
  while (s.labels.provenance[p] != Provenance::Predicted) ++p;
  s = submit_corrections(s, {{p, other_class(s, p), true}}, 300);
  s = train_and_predict(s);
  s = finalize(s);
  const auto text = event_log_ndjson(s);
  const auto events = parse_event_log(text);
  EXPECT_EQ(events, s.events);
  const auto again = replay(chair().cloud, nullptr, events);
  EXPECT_EQ(again.labels, s.labels);
  EXPECT_EQ(again.clicks, s.clicks);
  EXPECT_EQ(again.phase, Phase::Finalized);
  EXPECT_EQ(*again.model, *s.model);
}

TEST(EventLog, BadLogs) {
  EXPECT_THROW(replay(chair().cloud, nullptr, {}), FormatError);
  EXPECT_THROW(replay(chair().cloud, nullptr, {"{\"op\":\"seeds\"}"}), FormatError);
  EXPECT_THROW(replay(chair().cloud, nullptr, {"not json"}), FormatError);
}

TEST(SessionConfigJson, RoundTripAndErrors) {
  SessionConfig c = fast_config();
  c.grow.mode = GrowMode::KnnBall;
  c.grow.connectivity = Fdn{0.05};
  c.train.beta_schedule = {0.5, 0.25};
  const auto back = session_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(session_config_from_json(nlohmann::json{{"train", {{"learning_rate", "x"}}}}), InvalidParameter);
  try {
    session_config_from_json(nlohmann::json{{"train", {{"learning_rate", -1.0}}}});
    FAIL();
  } catch (const InvalidParameter& e) {
    EXPECT_NE(std::string(e.what()).find("config.train"), std::string::npos) << e.what();
  }
}
