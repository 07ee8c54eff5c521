#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gwnet/nn_ops.hpp"
#include "gwnet/tensor.hpp"
#include "test_util.hpp"

using namespace gwnet;
using testutil::make_rng;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

struct TapeReset {
  TapeReset() { Tape::current().clear(); }
  ~TapeReset() { Tape::current().clear(); }
};

}  // namespace

TEST_CASE("matmul identity and hand-computed products") {
  TapeReset guard;
  auto rng = make_rng(7);
  Tensor eye({3, 3});
  for (Index i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
  Tensor x = random_tensor({3, 2}, rng);
  Tensor y = matmul(eye, x);
  CHECK(max_abs_diff(y, x) == 0.0);

  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {1, 1});
  Tensor c = matmul(a, b);
  CHECK(c.at({0, 0}) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(c.at({1, 0}) == doctest::Approx(7.0).epsilon(1e-15));
}

TEST_CASE("matmul rejects mismatched inner dimensions naming both shapes") {
  TapeReset guard;
  Tensor a({2, 3});
  Tensor b({4, 2});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches central differences") {
  TapeReset guard;
  auto rng = make_rng(11);
  Tensor b = random_tensor({4, 3}, rng);
  auto f = [&](const Tensor& a) { return sum(matmul(a, b)); };
  const double err = grad_check<double>(f, random_tensor({5, 4}, rng));
  CHECK(err < 1e-6);
}

TEST_CASE("elementwise forward values") {
  TapeReset guard;
  Tensor v({3}, {-1.0, 0.0, 2.0});
  Tensor r = relu(v);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);

  Tensor zero({1}, {0.0});
  CHECK(sigmoid(zero).item() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(tanh(zero).item() == 0.0);
}

TEST_CASE("elementwise add/mul reject shape mismatch") {
  TapeReset guard;
  Tensor a({2, 2});
  Tensor b({2, 3});
  CHECK_THROWS_AS(add(a, b), DimensionError);
  CHECK_THROWS_AS(mul(a, b), DimensionError);
}

TEST_CASE("mul gradient matches central differences") {
  TapeReset guard;
  auto rng = make_rng(13);
  Tensor b = random_tensor({3, 3}, rng);
  auto f = [&](const Tensor& a) { return sum(mul(a, b)); };
  CHECK(grad_check<double>(f, random_tensor({3, 3}, rng)) < 1e-6);
}

TEST_CASE("unary op gradients at safe points") {
  TapeReset guard;
  auto rng = make_rng(17);
  for (auto op : {0, 1, 2}) {
    auto f = [&](const Tensor& x) {
      switch (op) {
        case 0: return sum(relu(x));
        case 1: return sum(sigmoid(x));
        default: return sum(tanh(x));
      }
    };
    // keep relu inputs away from the kink
    Tensor x = random_tensor({4, 5}, rng, 0.2, 1.5);
    CHECK(grad_check<double>(f, x) < 1e-5);
    Tensor xn = random_tensor({4, 5}, rng, -1.5, -0.2);
    CHECK(grad_check<double>(f, xn) < 1e-5);
  }
}

TEST_CASE("softmax_rows uniform, frozen values, and row sums") {
  TapeReset guard;
  Tensor z({4, 4});
  Tensor u = softmax_rows(z);
  for (Index i = 0; i < u.numel(); ++i) CHECK(u[i] == doctest::Approx(0.25).epsilon(1e-15));

  Tensor row({1, 2}, {1.0, 0.0});
  Tensor s = softmax_rows(row);
  // e/(e+1) and 1/(e+1)
  CHECK(s[0] == doctest::Approx(0.73105857863000490).epsilon(1e-14));
  CHECK(s[1] == doctest::Approx(0.26894142136999512).epsilon(1e-14));

  auto rng = make_rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    // include rows with large magnitudes; max-subtraction keeps them finite
    Tensor x = random_tensor({5, 7}, rng, -1e5, 1e5);
    Tensor y = softmax_rows(x);
    for (Index r = 0; r < 5; ++r) {
      double rowsum = 0.0;
      for (Index c = 0; c < 7; ++c) {
        rowsum += y.at({r, c});
        CHECK(y.at({r, c}) >= 0.0);
      }
      CHECK(std::abs(rowsum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("softmax_rows gradient") {
  TapeReset guard;
  auto rng = make_rng(29);
  Tensor w = random_tensor({3, 4}, rng);
  auto f = [&](const Tensor& x) { return sum(mul(softmax_rows(x), w)); };
  CHECK(grad_check<double>(f, random_tensor({3, 4}, rng)) < 1e-5);
}

TEST_CASE("backward populates leaf gradients") {
  TapeReset guard;
  auto rng = make_rng(31);
  Tensor w = random_tensor({3, 4}, rng);
  w.set_requires_grad(true);

  backward(sum(w));
  for (double g : w.grad()) CHECK(g == 1.0);

  w.zero_grad();
  Tape::current().clear();
  backward(sum(mul(w, w)));
  for (Index i = 0; i < w.numel(); ++i) CHECK(w.grad()[static_cast<std::size_t>(i)] == doctest::Approx(2.0 * w[i]).epsilon(1e-15));
}

TEST_CASE("backward rejects non-scalar roots") {
  TapeReset guard;
  Tensor w({2, 2});
  w.set_requires_grad(true);
  Tensor y = mul(w, w);
  CHECK_THROWS_AS(backward(y), ContractError);
}

TEST_CASE("backward on two losses accumulates the sum of gradients") {
  TapeReset guard;
  auto rng = make_rng(37);
  Tensor w = random_tensor({5}, rng);
  w.set_requires_grad(true);

  Tensor l1 = sum(mul(w, w));
  Tensor l2 = sum(w);
  backward(l1);
  backward(l2);
  std::vector<double> combined = w.grad();

  w.zero_grad();
  Tape::current().clear();
  backward(add(sum(mul(w, w)), sum(w)));
  for (std::size_t i = 0; i < combined.size(); ++i)
    CHECK(combined[i] == doctest::Approx(w.grad()[i]).epsilon(1e-14));
}

TEST_CASE("forward values identical with and without grad tracking") {
  TapeReset guard;
  auto rng = make_rng(41);
  Tensor base = random_tensor({4, 4}, rng);

  Tensor tracked = base.clone();
  tracked.set_requires_grad(true);
  Tensor y1 = softmax_rows(tanh(matmul(tracked, tracked)));

  Tape::current().clear();
  Tensor plain = base.clone();
  Tensor y2;
  {
    Tape::Pause pause;
    y2 = softmax_rows(tanh(matmul(plain, plain)));
  }
  CHECK(max_abs_diff(y1, y2) == 0.0);
}

TEST_CASE("grad_check exact zero on a linear function with representable eps") {
  TapeReset guard;
  Tensor x({6}, {1.0, -2.0, 3.0, 4.0, -5.0, 6.0});
  auto f = [](const Tensor& t) { return sum(t); };
  CHECK(grad_check<double>(f, x, 0.5) == 0.0);
}

TEST_CASE("grad_check tight on sum of squares") {
  TapeReset guard;
  auto rng = make_rng(43);
  auto f = [](const Tensor& t) { return sum(mul(t, t)); };
  CHECK(grad_check<double>(f, random_tensor({3, 3}, rng)) < 1e-7);
}

TEST_CASE("structured op gradients: bias, mixing, projection, reshaping") {
  TapeReset guard;
  auto rng = make_rng(47);
  const Shape xshape{2, 3, 4, 5};

  Tensor bias = random_tensor({3}, rng);
  auto f_bias = [&](const Tensor& x) { return sum(add_channel_bias(x, bias)); };
  CHECK(grad_check<double>(f_bias, random_tensor(xshape, rng)) < 1e-5);

  Tensor x_fixed = random_tensor(xshape, rng);
  auto f_bias_w = [&](const Tensor& b) { return sum(mul(add_channel_bias(x_fixed, b), x_fixed)); };
  CHECK(grad_check<double>(f_bias_w, bias) < 1e-5);

  Tensor support = random_tensor({4, 4}, rng);
  auto f_mix = [&](const Tensor& x) { return sum(mul(graph_mix(x, support), x)); };
  CHECK(grad_check<double>(f_mix, random_tensor(xshape, rng)) < 1e-5);
  auto f_mix_m = [&](const Tensor& m) { return sum(graph_mix(x_fixed, m)); };
  CHECK(grad_check<double>(f_mix_m, support) < 1e-5);

  Tensor w = random_tensor({3, 2}, rng);
  auto f_proj = [&](const Tensor& x) { return sum(channel_project(x, w)); };
  CHECK(grad_check<double>(f_proj, random_tensor(xshape, rng)) < 1e-5);
  auto f_proj_w = [&](const Tensor& ww) { return sum(channel_project(x_fixed, ww)); };
  CHECK(grad_check<double>(f_proj_w, w) < 1e-5);

  auto f_pad = [&](const Tensor& x) { return sum(mul(pad_time_left(x, 3), pad_time_left(x, 3))); };
  CHECK(grad_check<double>(f_pad, random_tensor(xshape, rng)) < 1e-5);

  auto f_tail = [&](const Tensor& x) { return sum(mul(tail_time(x, 2), tail_time(x, 2))); };
  CHECK(grad_check<double>(f_tail, random_tensor(xshape, rng)) < 1e-5);

  Tensor wide = random_tensor({2, 6, 4, 1}, rng);
  auto f_reshape = [&](const Tensor& x) {
    Tensor y = reshape_horizon(x, 3, 2);
    return sum(mul(y, y));
  };
  CHECK(grad_check<double>(f_reshape, wide) < 1e-5);
}

TEST_CASE("pad and tail round-trip values") {
  TapeReset guard;
  auto rng = make_rng(53);
  Tensor x = random_tensor({1, 2, 3, 4}, rng);
  Tensor padded = pad_time_left(x, 2);
  CHECK(padded.dim(3) == 6);
  for (Index c = 0; c < 2; ++c)
    for (Index n = 0; n < 3; ++n) {
      CHECK(padded.at({0, c, n, 0}) == 0.0);
      CHECK(padded.at({0, c, n, 1}) == 0.0);
      for (Index l = 0; l < 4; ++l) CHECK(padded.at({0, c, n, l + 2}) == x.at({0, c, n, l}));
    }
  Tensor back = tail_time(padded, 4);
  CHECK(max_abs_diff(back, x) == 0.0);
}

TEST_CASE("dropout scales kept entries and is identity at p=0") {
  TapeReset guard;
  auto rng = make_rng(59);
  Tensor x = random_tensor({2, 3, 2, 2}, rng, 0.5, 1.5);
  Tensor same = dropout(x, 0.0, rng);
  CHECK(same.same_storage(x));

  Tensor dropped = dropout(x, 0.4, rng);
  int kept = 0, zeroed = 0;
  for (Index i = 0; i < x.numel(); ++i) {
    if (dropped[i] == 0.0) {
      ++zeroed;
    } else {
      ++kept;
      CHECK(dropped[i] == doctest::Approx(x[i] / 0.6).epsilon(1e-12));
    }
  }
  CHECK(kept + zeroed == x.numel());
  CHECK_THROWS_AS(dropout(x, 1.0, rng), ValidationError);
}

TEST_CASE("scalar template instantiates for float") {
  TapeT<float>::current().clear();
  TensorT<float> a({2, 2}, {1.f, 2.f, 3.f, 4.f});
  TensorT<float> b({2, 1}, {1.f, 1.f});
  TensorT<float> c = matmul(a, b);
  CHECK(c[0] == 3.f);
  CHECK(c[1] == 7.f);
  TapeT<float>::current().clear();
}
