#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dimmpf/env_sim.hpp"

using namespace dimmpf;

TEST_CASE("true model step at pinned coefficient values") {
  double x, y;
  TrueModel::dyn_obs_step(1.0, 0, 0.0, 0.0, x, y);
  CHECK(x == doctest::Approx(-0.1).epsilon(1e-15));
  CHECK(y == doctest::Approx(-0.1 * std::sqrt(0.1)).epsilon(1e-12));
  CHECK(y == doctest::Approx(-0.031622776601683794).epsilon(1e-12));

  TrueModel::dyn_obs_step(1.0, 7, 0.0, 0.0, x, y);
  CHECK(x == doctest::Approx(4.9).epsilon(1e-15));
  CHECK(y == doctest::Approx(0.9 * std::sqrt(4.9) + 4.0).epsilon(1e-12));
  CHECK(y == doctest::Approx(5.992234925906079).epsilon(1e-12));

  // b_k = 0 and x = 0: observation mean collapses to zero
  CHECK(TrueModel::obs_mean(0.0, 0) == 0.0);
  CHECK(TrueModel::obs_mean(0.0, 4) == 0.0);
}

TEST_CASE("markov matrix rows") {
  double row[8];
  MarkovMatrix::row(0, row);
  CHECK(row[0] == 0.8);
  CHECK(row[1] == 0.15);
  CHECK(row[2] == doctest::Approx(1.0 / 120.0).epsilon(1e-16));
  MarkovMatrix::row(7, row);  // cyclic wrap: last row feeds regime 1
  CHECK(row[7] == 0.8);
  CHECK(row[0] == 0.15);
  for (int i = 0; i < 8; ++i) {
    MarkovMatrix::row(i, row);
    double sum = 0;
    for (double v : row) sum += v;
    CHECK(std::fabs(sum - 1.0) <= 1e-15);
  }
}

TEST_CASE("polya law") {
  std::array<int, 8> counts{};
  counts[2] = 1;  // history (k0 = regime index 2), t = 1
  double law[8];
  polya_law(counts, 1, law);
  CHECK(law[2] == doctest::Approx(2.0 / 9.0).epsilon(1e-15));
  for (int j = 0; j < 8; ++j)
    if (j != 2) CHECK(law[j] == doctest::Approx(1.0 / 9.0).epsilon(1e-15));
  double sum = 0;
  for (double v : law) sum += v;
  CHECK(std::fabs(sum - 1.0) <= 1e-12);
}

TEST_CASE("erlang conditional law cases") {
  double law[8];
  erlang_conditional_law(3, true, false, law);
  for (int j = 0; j < 8; ++j) CHECK(law[j] == doctest::Approx(0.125).epsilon(1e-15));

  erlang_conditional_law(3, false, false, law);
  CHECK(law[3] == 1.0);

  erlang_conditional_law(3, false, true, law);
  CHECK(law[4] == doctest::Approx(0.6));
  CHECK(law[2] == doctest::Approx(0.4));

  // cyclic wrap both directions
  erlang_conditional_law(7, false, true, law);
  CHECK(law[0] == doctest::Approx(0.6));
  CHECK(law[6] == doctest::Approx(0.4));
  erlang_conditional_law(0, false, true, law);
  CHECK(law[1] == doctest::Approx(0.6));
  CHECK(law[7] == doctest::Approx(0.4));
}

TEST_CASE("every emitted switching law is a probability vector; erlang stasis") {
  for (EnvKind kind : {EnvKind::markov, EnvKind::polya, EnvKind::erlang}) {
    RandomStream rng(11 + static_cast<int>(kind));
    SwitchState s;
    switch_init(kind, s, rng);
    for (int t = 1; t <= 2000; ++t) {
      double law[8];
      const int k_prev = s.k;
      const int l_prev = s.l;
      switch_step(kind, s, t, rng, law);
      double sum = 0;
      for (double v : law) {
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(std::fabs(sum - 1.0) <= 1e-12);
      if (kind == EnvKind::erlang && s.m == 0 && s.n == 0) {
        CHECK(s.k == k_prev);
        CHECK(s.l == l_prev);
      }
    }
  }
}

TEST_CASE("markov transition frequencies over 1e6 steps match B within 3 binomial SE") {
  RandomStream rng(99);
  SwitchState s;
  switch_init(EnvKind::markov, s, rng);
  long counts[8][8] = {};
  long visits[8] = {};
  const long steps = 1000000;
  for (long t = 1; t <= steps; ++t) {
    const int from = s.k;
    const int to = switch_step(EnvKind::markov, s, static_cast<int>(t), rng);
    ++counts[from][to];
    ++visits[from];
  }
  double row[8];
  for (int i = 0; i < 8; ++i) {
    MarkovMatrix::row(i, row);
    for (int j = 0; j < 8; ++j) {
      const double p = row[j];
      const double se = std::sqrt(p * (1 - p) / visits[i]);
      const double freq = static_cast<double>(counts[i][j]) / visits[i];
      CHECK(std::fabs(freq - p) <= 3.0 * se + 1e-12);
    }
  }
}

TEST_CASE("dataset split sizes and byte-identical regeneration") {
  Dataset a = generate_dataset(EnvKind::markov, 80, 10, 42);
  CHECK(a.train.size() == 40);
  CHECK(a.val.size() == 20);
  CHECK(a.test.size() == 20);
  for (const auto& r : a.train) {
    CHECK(r.y.size() == 11);
    for (uint8_t k : r.k) CHECK(k < 8);
  }

  const std::string d1 = "/tmp/dimmpf_ds_a", d2 = "/tmp/dimmpf_ds_b";
  a.save(d1);
  Dataset b = generate_dataset(EnvKind::markov, 80, 10, 42);
  b.save(d2);
  for (const char* split : {"/train.rstd", "/val.rstd", "/test.rstd"}) {
    std::ifstream f1(d1 + split, std::ios::binary), f2(d2 + split, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    CHECK(!s1.empty());
  }

  Dataset c = Dataset::load(d1);
  CHECK(c.kind == EnvKind::markov);
  CHECK(c.T == 10);
  CHECK(c.train.size() == 40);
  for (size_t i = 0; i < c.train.size(); ++i) {
    CHECK(c.train[i].seed == a.train[i].seed);
    for (size_t t = 0; t < c.train[i].y.size(); ++t) {
      CHECK(c.train[i].y[t] == a.train[i].y[t]);
      CHECK(c.train[i].x[t] == a.train[i].x[t]);
      CHECK(c.train[i].k[t] == a.train[i].k[t]);
    }
  }

  a.export_csv(d1);
  std::ifstream csv(d1 + std::string("/test.csv"));
  std::string header;
  std::getline(csv, header);
  CHECK(header == "traj,t,y,x,k");
}

TEST_CASE("different seeds give different datasets; different envs differ") {
  Dataset a = generate_dataset(EnvKind::markov, 8, 10, 1);
  Dataset b = generate_dataset(EnvKind::markov, 8, 10, 2);
  CHECK(a.train[0].y != b.train[0].y);
  Dataset c = generate_dataset(EnvKind::erlang, 8, 10, 1);
  bool same = true;
  for (size_t t = 0; t < a.train[0].k.size(); ++t)
    same = same && a.train[0].k[t] == c.train[0].k[t];
  CHECK(!same);
}

TEST_CASE("erlang count bookkeeping follows the literal formula") {
  // replay a trajectory and recompute c(k_{0:t}, k) from the recorded history
  RandomStream rng(5150);
  SwitchState s;
  switch_init(EnvKind::erlang, s, rng);
  std::vector<int> ks = {s.k};
  std::vector<int> ms = {s.m_prev};  // m_0
  for (int t = 1; t <= 400; ++t) {
    switch_step(EnvKind::erlang, s, t, rng);
    ks.push_back(s.k);
    ms.push_back(s.m);
    std::array<long, 8> want{};
    for (int u = 0; u + 1 <= t; ++u)
      if (ks[u + 1] != ks[u] || ms[u] == 1) ++want[ks[u]];
    for (int q = 0; q < 8; ++q) CHECK(s.counts[q] == want[q]);
  }
}
