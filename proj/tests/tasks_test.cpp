#include "metaprep/tasks.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace metaprep;
using namespace metaprep::tasks;

namespace {

Eigen::Array4d band_histogram(const GeneratorSpec& spec, const std::vector<Index>& sentence) {
  Eigen::Array4d h = Eigen::Array4d::Zero();
  for (Index t : sentence) {
    int b = spec.band_of(t);
    if (b >= 0 && b < 4) h(b) += 1.0;
  }
  return h;
}

int dominant_band(const GeneratorSpec& spec, const std::vector<Index>& sentence) {
  Eigen::Array4d h = band_histogram(spec, sentence);
  int best = 0;
  for (int i = 1; i < 4; ++i) {
    if (h(i) > h(best)) best = i;
  }
  return best;
}

}  // namespace

TEST_SUITE_BEGIN("tasks");

TEST_CASE("corpus: deterministic per seed, reserved ids never appear as content") {
  Corpus a = generate_corpus(77, 20, 64);
  Corpus b = generate_corpus(77, 20, 64);
  CHECK(a.documents == b.documents);
  CHECK(a.doc_topics == b.doc_topics);
  Corpus c = generate_corpus(78, 20, 64);
  CHECK(a.documents != c.documents);

  size_t tokens = 0;
  for (const auto& doc : a.documents) {
    CHECK(doc.size() >= 2);  // NSP positives need a next sentence
    for (const auto& sentence : doc) {
      for (Index t : sentence) {
        CHECK(t >= kFirstContent);
        CHECK(t < 64);
        ++tokens;
      }
    }
  }
  CHECK(tokens > 0);
  CHECK_THROWS_WITH_AS(generate_corpus(1, 4, 7), doctest::Contains("vocab too small"), ValueError);
}

TEST_CASE("corpus: golden fingerprint of the seeded generator") {
  Corpus c = generate_corpus(77, 20, 64);
  REQUIRE(c.documents.size() == 20);
  REQUIRE(c.documents[0].size() == 7);
  CHECK(c.documents[0][0] == std::vector<Index>{53, 49, 51, 40, 43, 46, 43, 8});
}

TEST_CASE("corpus: export/import round trip") {
  Corpus c = generate_corpus(123, 6, 32);
  std::stringstream ss;
  save_corpus(c, ss);
  Corpus back = load_corpus(ss, 32);
  CHECK(back.documents == c.documents);
  CHECK(back.vocab_size == 32);

  std::stringstream bad("5 99\n");
  CHECK_THROWS_AS(load_corpus(bad, 32), IoError);
}

TEST_CASE("mask_batch: golden regression vector") {
  RngStream rng = RngStream::from_seed(2024).split("mask");
  std::vector<std::vector<Index>> rows{{1, 10, 11, 12, 13, 14, 15, 16, 17, 2}};
  Batch b = mask_batch(rows, 64, rng);
  CHECK(b.tokens.ids == std::vector<Index>{1, 10, 3, 3, 13, 14, 15, 16, 17, 2});
  CHECK(b.mask_positions == std::vector<Index>{2, 3});
  CHECK(b.mask_targets == std::vector<Index>{11, 12});
  CHECK(b.tag == TaskTag::kMlm);
}

TEST_CASE("mask_batch: selection and replacement statistics match the 15% / 80-10-10 procedure") {
  RngStream rng = RngStream::from_seed(31).split("stats");
  const Index n_rows = 3200, row_len = 32;
  std::vector<std::vector<Index>> rows(n_rows, std::vector<Index>(row_len, 10));
  Batch b = mask_batch(rows, 64, rng);

  const double total = static_cast<double>(n_rows * row_len);
  REQUIRE(total >= 1e5);
  double selected = static_cast<double>(b.mask_positions.size());
  CHECK(selected / total == doctest::Approx(0.15).epsilon(0.01 / 0.15));

  double n_mask = 0, n_keep = 0, n_random = 0;
  for (size_t i = 0; i < b.mask_positions.size(); ++i) {
    Index tok = b.tokens.ids[static_cast<size_t>(b.mask_positions[i])];
    if (tok == kMask) {
      ++n_mask;
    } else if (tok == b.mask_targets[i]) {
      ++n_keep;
    } else {
      ++n_random;
    }
  }
  CHECK(n_mask / selected == doctest::Approx(0.8).epsilon(0.01 / 0.8));
  CHECK(n_random / selected == doctest::Approx(0.1).epsilon(0.011 / 0.1));
  CHECK(n_keep / selected == doctest::Approx(0.1).epsilon(0.02 / 0.1));

  // Untouched positions keep their original tokens.
  std::vector<bool> touched(static_cast<size_t>(n_rows * row_len), false);
  for (Index p : b.mask_positions) touched[static_cast<size_t>(p)] = true;
  for (Index i = 0; i < n_rows * row_len; ++i) {
    if (!touched[static_cast<size_t>(i)]) CHECK(b.tokens.ids[static_cast<size_t>(i)] == 10);
  }
}

TEST_CASE("mask_batch: select-all with keep-original leaves tokens unchanged") {
  RngStream rng = RngStream::from_seed(1).split("mask");
  std::vector<std::vector<Index>> rows{{1, 10, 11, 12, 2}};
  MaskOptions opts;
  opts.select_prob = 1.0;
  opts.mask_prob = 0.0;
  opts.random_prob = 0.0;
  Batch b = mask_batch(rows, 64, rng, opts);
  CHECK(b.tokens.ids == std::vector<Index>{1, 10, 11, 12, 2});
  CHECK(b.mask_positions == std::vector<Index>{1, 2, 3});
  CHECK(b.mask_targets == std::vector<Index>{10, 11, 12});
}

TEST_CASE("mask_batch: at least one position per example, reserved tokens never selected") {
  RngStream rng = RngStream::from_seed(3).split("mask");
  MaskOptions opts;
  opts.select_prob = 0.0;  // only the forced position fires
  std::vector<std::vector<Index>> rows{{1, 10, 2}, {1, 11, 2}};
  Batch b = mask_batch(rows, 64, rng, opts);
  CHECK(b.mask_positions.size() == 2);
  CHECK(b.mask_targets == std::vector<Index>{10, 11});

  std::vector<std::vector<Index>> hopeless{{1, 2}};
  CHECK_THROWS_WITH_AS(mask_batch(hopeless, 64, rng), doctest::Contains("no maskable"), ValueError);
}

TEST_CASE("make_nsp_pair: golden vectors and the 50% positive rate") {
  Corpus c = generate_corpus(77, 20, 64);
  RngStream rng = RngStream::from_seed(5).split("nsp");
  NspPair p0 = make_nsp_pair(c, rng);
  CHECK(p0.label == 0);
  CHECK(p0.first == std::vector<Index>{39, 47, 38, 21, 37, 45, 37, 38});
  CHECK(p0.second == std::vector<Index>{61, 53, 38, 52, 23, 11, 23, 49});

  RngStream rate_rng = RngStream::from_seed(6).split("nsp");
  int positives = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) positives += static_cast<int>(make_nsp_pair(c, rate_rng).label);
  CHECK(static_cast<double>(positives) / n == doctest::Approx(0.5).epsilon(0.02 / 0.5));
}

TEST_CASE("make_nsp_pair: positives in a two-sentence corpus are the actual next sentence") {
  Corpus c;
  c.vocab_size = 16;
  c.spec.vocab_size = 16;
  c.documents = {{{4, 5, 6}, {7, 8, 9}}};
  c.doc_topics = {0};
  bool saw_positive = false, saw_negative = false;
  for (uint64_t seed = 0; seed < 32 && !(saw_positive && saw_negative); ++seed) {
    RngStream rng = RngStream::from_seed(seed);
    NspPair p = make_nsp_pair(c, rng);
    CHECK(p.first == std::vector<Index>{4, 5, 6});  // only sentence with a successor
    if (p.label == 1) {
      CHECK(p.second == std::vector<Index>{7, 8, 9});
      saw_positive = true;
    } else {
      saw_negative = true;
    }
  }
  CHECK(saw_positive);
  CHECK(saw_negative);
}

TEST_CASE("nsp probe: logistic regression separates true-next from random pairs above 60%") {
  Corpus c = generate_corpus(4242, 60, 64);
  RngStream rng = RngStream::from_seed(88).split("probe");
  const int n_train = 8000, n_test = 2000;

  auto features = [&](const NspPair& p) {
    Eigen::Array3d f;
    Index a1 = p.first[p.first.size() - 2], a2 = p.first.back();
    f(0) = p.second.front() == chain_successor(c.spec.chain_key(), a1, a2, c.spec.n_content()) ? 1.0 : 0.0;
    Eigen::Array4d ha = band_histogram(c.spec, p.first), hb = band_histogram(c.spec, p.second);
    double denom = std::sqrt(ha.square().sum() * hb.square().sum());
    f(1) = denom > 0 ? (ha * hb).sum() / denom : 0.0;
    f(2) = 1.0;
    return f;
  };

  std::vector<Eigen::Array3d> xs;
  std::vector<double> ys;
  for (int i = 0; i < n_train + n_test; ++i) {
    NspPair p = make_nsp_pair(c, rng);
    xs.push_back(features(p));
    ys.push_back(static_cast<double>(p.label));
  }

  Eigen::Array3d w = Eigen::Array3d::Zero();
  for (int it = 0; it < 300; ++it) {
    Eigen::Array3d g = Eigen::Array3d::Zero();
    for (int i = 0; i < n_train; ++i) {
      double z = (w * xs[static_cast<size_t>(i)]).sum();
      double pred = 1.0 / (1.0 + std::exp(-z));
      g += (pred - ys[static_cast<size_t>(i)]) * xs[static_cast<size_t>(i)];
    }
    w -= 0.5 / n_train * g;
  }

  int correct = 0;
  for (int i = n_train; i < n_train + n_test; ++i) {
    double z = (w * xs[static_cast<size_t>(i)]).sum();
    bool pred = z > 0;
    if (pred == (ys[static_cast<size_t>(i)] > 0.5)) ++correct;
  }
  double accuracy = static_cast<double>(correct) / n_test;
  CHECK(accuracy > 0.60);
}

TEST_CASE("make_pair_task_batch: golden vector, balance, and topic semantics") {
  Corpus c = generate_corpus(77, 20, 64);
  RngStream rng = RngStream::from_seed(9).split("pair");
  Batch b = make_pair_task_batch(c, TaskTag::kQaMatch, 2, 24, rng);
  CHECK(b.labels == std::vector<Index>{0, 0});
  CHECK(b.tokens.at(0, 0) == kCls);
  std::vector<Index> row0(b.tokens.ids.begin(), b.tokens.ids.begin() + 24);
  CHECK(row0 == std::vector<Index>{1, 54, 24, 57, 35, 59, 2, 48, 60, 39, 35, 55, 40, 54, 31, 13, 5, 37, 2,
                                   0, 0, 0, 0, 0});
  std::vector<Index> seg0(b.segments.ids.begin(), b.segments.ids.begin() + 24);
  CHECK(seg0 == std::vector<Index>{0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0});

  CHECK_THROWS_AS(make_pair_task_batch(c, TaskTag::kMlm, 2, 24, rng), ValueError);

  // Balance and the same-topic label semantics, measured on fresh examples.
  RngStream srng = RngStream::from_seed(10).split("pair");
  int positives = 0, n = 0;
  int same_given_pos = 0, pos_n = 0, same_given_neg = 0, neg_n = 0;
  for (int rep = 0; rep < 100; ++rep) {
    Batch batch = make_pair_task_batch(c, TaskTag::kQqMatch, 100, 24, srng);
    for (Index e = 0; e < batch.batch_size(); ++e) {
      Index label = batch.labels[static_cast<size_t>(e)];
      positives += static_cast<int>(label);
      ++n;
      // Recover the two sides from the packed row.
      std::vector<Index> a, bseq;
      for (Index t = 1; t < batch.seq_len(); ++t) {
        Index tok = batch.tokens.at(e, t);
        if (tok == kSep || tok == kPad) continue;
        (batch.segments.at(e, t) == 0 ? a : bseq).push_back(tok);
      }
      bool same = dominant_band(c.spec, a) == dominant_band(c.spec, bseq);
      if (label == 1) {
        same_given_pos += same;
        ++pos_n;
      } else {
        same_given_neg += same;
        ++neg_n;
      }
    }
  }
  CHECK(static_cast<double>(positives) / n == doctest::Approx(0.5).epsilon(0.02 / 0.5));
  CHECK(static_cast<double>(same_given_pos) / pos_n > 0.6);
  CHECK(static_cast<double>(same_given_neg) / neg_n < 0.4);
}

TEST_CASE("sample_pretrain_batches: counts, degenerate depth, and mix frequencies") {
  Corpus c = generate_corpus(7, 10, 64);
  TaskMix pure{{{TaskTag::kMlm, 1.0}}};
  RngStream rng = RngStream::from_seed(2).split("sample");
  auto batches = sample_pretrain_batches(c, pure, 4, 2, 16, rng);
  REQUIRE(batches.size() == 4);
  for (const auto& b : batches) CHECK(b.tag == TaskTag::kMlm);

  auto single = sample_pretrain_batches(c, pure, 1, 2, 16, rng);
  CHECK(single.size() == 1);  // k = 0: the meta-test batch only

  TaskMix mix{{{TaskTag::kMlm, 0.5}, {TaskTag::kNsp, 0.5}}};
  int mlm = 0;
  const int n = 10000;
  RngStream freq_rng = RngStream::from_seed(3).split("sample");
  for (int i = 0; i < n; ++i) {
    auto draw = sample_pretrain_batches(c, mix, 1, 1, 16, freq_rng);
    mlm += draw[0].tag == TaskTag::kMlm ? 1 : 0;
  }
  CHECK(static_cast<double>(mlm) / n == doctest::Approx(0.5).epsilon(0.02 / 0.5));

  TaskMix bad{{{TaskTag::kMlm, 0.7}}};
  CHECK_THROWS_WITH_AS(sample_pretrain_batches(c, bad, 1, 1, 16, rng), doctest::Contains("sum"), ValueError);
  TaskMix empty;
  CHECK_THROWS_AS(sample_pretrain_batches(c, empty, 1, 1, 16, rng), ValueError);
}

TEST_CASE("sampling is a pure function of the stream: replay reproduces batches") {
  Corpus c = generate_corpus(7, 10, 64);
  TaskMix mix{{{TaskTag::kMlm, 0.5}, {TaskTag::kNsp, 0.5}}};
  RngStream r1 = RngStream::from_seed(11).split("data");
  RngStream r2 = RngStream::from_seed(11).split("data");
  auto a = sample_pretrain_batches(c, mix, 3, 4, 16, r1);
  auto b = sample_pretrain_batches(c, mix, 3, 4, 16, r2);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].tokens.ids == b[i].tokens.ids);
    CHECK(a[i].mask_positions == b[i].mask_positions);
    CHECK(a[i].labels == b[i].labels);
  }
  CHECK(r1.position() == r2.position());
}

TEST_CASE("quadratic oracle: closed-form meta gradient") {
  QuadraticTask task;
  task.curvature = Eigen::ArrayXd::Ones(1);
  task.center = Eigen::ArrayXd::Zero(1);
  Eigen::ArrayXd theta0 = Eigen::ArrayXd::Ones(1);

  // k = 0: the plain gradient A(theta0 - c).
  CHECK(quadratic_meta_gradient_oracle(task, theta0, 0.1, 0)(0) == doctest::Approx(1.0).epsilon(1e-15));
  // A = I, alpha = 0.1, k = 2: 0.9^2 * (0.9^2 * 1) = 0.6561.
  CHECK(quadratic_meta_gradient_oracle(task, theta0, 0.1, 2)(0) == doctest::Approx(0.6561).epsilon(1e-12));
  // alpha = 0: the gradient at theta0 regardless of k.
  CHECK(quadratic_meta_gradient_oracle(task, theta0, 0.0, 7)(0) == doctest::Approx(1.0).epsilon(1e-15));

  QuadraticTask stiff;
  stiff.curvature = Eigen::ArrayXd::Constant(1, 25.0);
  stiff.center = Eigen::ArrayXd::Zero(1);
  CHECK_THROWS_WITH_AS(quadratic_meta_gradient_oracle(stiff, theta0, 0.1, 1), doctest::Contains("unstable"),
                       NumericError);
  QuadraticTask degenerate;
  degenerate.curvature = Eigen::ArrayXd::Zero(1);
  degenerate.center = Eigen::ArrayXd::Zero(1);
  CHECK_THROWS_AS(quadratic_meta_gradient_oracle(degenerate, theta0, 0.1, 1), ValueError);
}

TEST_SUITE_END();
