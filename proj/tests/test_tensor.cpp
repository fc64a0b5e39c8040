#include "doctest.h"

#include <cstdio>
#include <filesystem>

#include "sbs/tensor.hpp"

using namespace sbs;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("tensor dims and storage agree") {
  auto t = Tensor<double>::zeros({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK_THROWS_AS(Tensor<double>({2, 3}, ArrayX<double>::Zero(5)), ShapeError);
}

TEST_CASE("row-major indexing") {
  auto t = Tensor<double>::from_list({2, 3}, {0, 1, 2, 3, 4, 5});
  CHECK(t.at({0, 2}) == 2.0);
  CHECK(t.at({1, 0}) == 3.0);
  CHECK(t[5] == 5.0);
}

TEST_CASE("reshape preserves data, rejects bad sizes") {
  auto t = Tensor<double>::from_list({2, 2}, {1, 2, 3, 4});
  auto r = t.reshaped({4});
  CHECK(r.at({3}) == 4.0);
  CHECK_THROWS_AS(t.reshaped({3}), ShapeError);
}

TEST_CASE("container round-trips") {
  RandomStream rng(11);
  const std::string path = temp_path("sbs_tensor_test.sbtn");

  SUBCASE("f64 payload is exact") {
    for (int trial = 0; trial < 10; ++trial) {
      Dims dims;
      const Index rank = 1 + static_cast<Index>(rng.uniform_int(3));
      for (Index i = 0; i < rank; ++i)
        dims.push_back(1 + static_cast<Index>(rng.uniform_int(5)));
      auto t = Tensor<double>::randn(dims, rng);
      write_tensor(path, t, TensorDType::F64);
      auto back = read_tensor<double>(path);
      REQUIRE(back.dims() == t.dims());
      CHECK((back.raw() == t.raw()).all());
    }
  }

  SUBCASE("f32 payload round-trips float data exactly") {
    auto t = Tensor<float>::randn({3, 7}, rng);
    write_tensor(path, t, TensorDType::F32);
    auto back = read_tensor<float>(path);
    CHECK((back.raw() == t.raw()).all());
  }

  SUBCASE("f64 values survive an f32 container within float precision") {
    auto t = Tensor<double>::randn({5}, rng);
    write_tensor(path, t, TensorDType::F32);
    auto back = read_tensor<double>(path);
    for (Index i = 0; i < t.size(); ++i)
      CHECK(back[i] == doctest::Approx(t[i]).epsilon(1e-6));
  }

  std::remove(path.c_str());
}

TEST_CASE("container rejects junk") {
  const std::string path = temp_path("sbs_tensor_junk.bin");
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("not a tensor", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(read_tensor<double>(path), IoError);
  CHECK_THROWS_AS(read_tensor<double>(temp_path("sbs_no_such_file.sbtn")), IoError);
  std::remove(path.c_str());
}

TEST_CASE("random streams are reproducible and decoupled") {
  RandomStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RandomStream c(derive_seed(42, "one")), d(derive_seed(42, "two"));
  bool all_equal = true;
  for (int i = 0; i < 100; ++i)
    if (c.next_u64() != d.next_u64()) all_equal = false;
  CHECK_FALSE(all_equal);

  RandomStream u(7);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform01();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
}
