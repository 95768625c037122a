#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "mgoe/params.hpp"

using mgoe::AdamState;
using mgoe::ParameterStore;
using mgoe::Tensor;
using mgoe::xavier_init;

TEST_CASE("xavier init") {
  SECTION("same seed gives identical tensors") {
    Tensor a = xavier_init({7, 3}, 99);
    Tensor b = xavier_init({7, 3}, 99);
    CHECK(a.v == b.v);
    Tensor c = xavier_init({7, 3}, 100);
    CHECK(a.v != c.v);
  }
  SECTION("values bounded by sqrt(6/(fan_in+fan_out))") {
    Tensor t = xavier_init({10, 10}, 1);
    const double bound = std::sqrt(6.0 / 20.0);
    for (double x : t.v) CHECK(std::fabs(x) <= bound);
  }
  SECTION("empirical mean over 1e4 draws is near zero") {
    Tensor t = xavier_init({100, 100}, 7);
    double mean = 0.0;
    for (double x : t.v) mean += x;
    mean /= static_cast<double>(t.v.size());
    CHECK(std::fabs(mean) < 0.01);
  }
}

TEST_CASE("adam") {
  SECTION("zero gradient leaves parameters unchanged") {
    ParameterStore ps;
    ps.add("w", Tensor({3}, {1.0, -2.0, 0.5}));
    AdamState st;
    st.lr = 0.1;
    st.init(ps);
    ps.zero_grads();
    adam_step(ps, st);
    CHECK(ps.at("w").value.v == std::vector<double>{1.0, -2.0, 0.5});
  }
  SECTION("one step on f(w)=w^2 from w=1 with lr=0.1 lands near 0.9") {
    ParameterStore ps;
    ps.add("w", Tensor({1}, {1.0}));
    AdamState st;
    st.lr = 0.1;
    st.init(ps);
    ps.at("w").grad.v[0] = 2.0;  // df/dw at w=1
    adam_step(ps, st);
    CHECK(ps.at("w").value.v[0] == Catch::Approx(0.9).margin(1e-6));
  }
  SECTION("repeated steps decrease a convex quadratic") {
    ParameterStore ps;
    ps.add("w", Tensor({1}, {1.0}));
    AdamState st;
    st.lr = 0.05;
    st.init(ps);
    double prev = 1.0;  // f(w) = w^2 at w=1
    for (int i = 0; i < 2; ++i) {
      const double w = ps.at("w").value.v[0];
      ps.at("w").grad.v[0] = 2.0 * w;
      adam_step(ps, st);
      const double wn = ps.at("w").value.v[0];
      CHECK(wn * wn < prev);
      prev = wn * wn;
    }
  }
  SECTION("moment shapes match parameter shapes") {
    ParameterStore ps;
    ps.add("a", Tensor({2, 3}));
    ps.add("b", Tensor({5}));
    AdamState st;
    st.init(ps);
    REQUIRE(st.m.size() == 2);
    CHECK(st.m[0].shape == std::vector<int>{2, 3});
    CHECK(st.v[1].shape == std::vector<int>{5});
  }
}

TEST_CASE("regularization gradients") {
  ParameterStore ps;
  ps.add("w", Tensor({3}, {2.0, -1.5, 0.0}));
  ps.zero_grads();
  ps.add_regularization_grads(0.1, 0.01);
  const auto& g = ps.at("w").grad.v;
  CHECK(g[0] == Catch::Approx(0.1 + 2 * 0.01 * 2.0));
  CHECK(g[1] == Catch::Approx(-0.1 + 2 * 0.01 * -1.5));
  CHECK(g[2] == Catch::Approx(0.0));  // sign(0) = 0
  CHECK(ps.l1_norm() == Catch::Approx(3.5));
  CHECK(ps.l2_norm_sq() == Catch::Approx(4.0 + 2.25));
}

TEST_CASE("checkpoint round trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "mgoe_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "model.ckpt").string();

  ParameterStore ps;
  ps.add("emb/user", xavier_init({4, 3}, 1));
  ps.add("tower/w", xavier_init({2, 2}, 2));
  save_checkpoint(ps, path);

  SECTION("values restore bit exactly") {
    ParameterStore ps2;
    ps2.add("emb/user", Tensor({4, 3}));
    ps2.add("tower/w", Tensor({2, 2}));
    load_checkpoint(ps2, path);
    CHECK(ps2.at("emb/user").value.v == ps.at("emb/user").value.v);
    CHECK(ps2.at("tower/w").value.v == ps.at("tower/w").value.v);
  }
  SECTION("index is readable standalone") {
    auto tensors = mgoe::read_checkpoint(path);
    REQUIRE(tensors.count("emb/user") == 1);
    CHECK(tensors.at("emb/user").shape == std::vector<int>{4, 3});
  }
  SECTION("missing tensor and shape mismatch are reported by name") {
    ParameterStore bad;
    bad.add("emb/user", Tensor({4, 3}));
    bad.add("extra", Tensor({1}));
    try {
      load_checkpoint(bad, path);
      FAIL("expected IoError");
    } catch (const mgoe::IoError& e) {
      CHECK(std::string(e.what()).find("extra") != std::string::npos);
    }
    ParameterStore wrong;
    wrong.add("emb/user", Tensor({3, 4}));
    wrong.add("tower/w", Tensor({2, 2}));
    CHECK_THROWS_AS(load_checkpoint(wrong, path), mgoe::IoError);
  }
  SECTION("garbage file is rejected") {
    const std::string bad_path = (dir / "junk.ckpt").string();
    std::ofstream os(bad_path, std::ios::binary);
    os << "not a checkpoint";
    os.close();
    CHECK_THROWS_AS(mgoe::read_checkpoint(bad_path), mgoe::IoError);
  }
  fs::remove_all(dir);
}
