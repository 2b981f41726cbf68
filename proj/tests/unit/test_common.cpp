// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include "doctest.h"
#include "tts/common/access.hpp"
#include "tts/common/canonical.hpp"
#include "tts/common/digest.hpp"
#include "tts/common/error.hpp"
#include "tts/common/text.hpp"

using namespace tts;

TEST_CASE("hash test vectors") {
  CHECK(to_hex(hash("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(to_hex(hash("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(to_hex(hash("abc", HashAlgorithm::Blake2b256)) ==
        "bddd813c634239723171ef3fee98579b94964e3bb1cb3e427262c8c068d52319");
}

TEST_CASE("hex round trip and rejection") {
  Digest d = hash("round trip");
  CHECK(digest_from_hex(to_hex(d)) == d);
  CHECK_THROWS_AS(from_hex("abc"), Error);
  CHECK_THROWS_AS(from_hex("zz"), Error);
  CHECK_THROWS_AS(digest_from_hex("00"), Error);
  CHECK(hash_algorithm_from_string("blake2b-256") == HashAlgorithm::Blake2b256);
  CHECK_THROWS_AS(hash_algorithm_from_string("md5"), Error);
}

TEST_CASE("canonical writer layout") {
  ByteWriter w;
  w.u32(0x01020304).i64(-2).f64(1.5).str("hi").boolean(true);
  CHECK(to_hex(w.bytes()) == "01020304" "fffffffffffffffe" "3ff8000000000000" "000000026869" "01");

  ByteWriter neg, pos;
  neg.f64(-0.0);
  pos.f64(0.0);
  CHECK(neg.bytes() == pos.bytes());

  ByteWriter n1, n2;
  n1.f64(std::numeric_limits<double>::quiet_NaN());
  n2.f64(-std::numeric_limits<double>::quiet_NaN());
  CHECK(n1.bytes() == n2.bytes());
}

TEST_CASE("canonical reader is strict") {
  ByteWriter w;
  w.u32(7).str("xy").boolean(false);
  {
    ByteReader r(w.bytes());
    CHECK(r.u32() == 7);
    CHECK(r.str() == "xy");
    CHECK_FALSE(r.boolean());
    CHECK_NOTHROW(r.finish());
  }
  {
    ByteReader r(w.bytes());
    r.u32();
    CHECK_THROWS_AS(r.finish(), Error);
  }
  Bytes truncated = w.bytes().substr(0, 6);
  ByteReader r(truncated);
  r.u32();
  CHECK_THROWS_AS(r.str(), Error);

  Bytes two{2};
  ByteReader rb(two);
  CHECK_THROWS_AS(rb.boolean(), Error);
}

TEST_CASE("role matrix covers every role and action") {
  const auto& matrix = permission_matrix();
  for (auto action : kAllActions) {
    REQUIRE(matrix.contains(action));
    for (auto role : kAllRoles) {
      Principal p{"e", {role}};
      bool expected = matrix.at(action).contains(role);
      CHECK(permits(p, action) == expected);
      if (expected) {
        CHECK_NOTHROW(require(p, action));
      } else {
        try {
          require(p, action);
          FAIL("expected Unauthorized");
        } catch (const Error& e) {
          CHECK(e.code() == Errc::Unauthorized);
        }
      }
    }
  }
  Principal nobody{"x", {}};
  for (auto action : kAllActions) CHECK_FALSE(permits(nobody, action));
  CHECK(action_from_string("WriteRule") == Action::WriteRule);
  CHECK_FALSE(action_from_string("Fly").has_value());
  CHECK(role_from_string("Auditor") == Role::Auditor);
}

TEST_CASE("number text") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(90.0) == "90");
  CHECK(format_number(-0.0) == "0");
  CHECK(parse_number("2.5") == 2.5);
  CHECK_THROWS_AS(parse_number("2.5x"), Error);
  CHECK_THROWS_AS(parse_number(""), Error);
  for (double v : {1e-300, 3.141592653589793, 123456789.125, -7.75}) {
    CHECK(parse_number(format_number(v)) == v);
  }
}
