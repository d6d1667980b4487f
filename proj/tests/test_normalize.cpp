#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "gen.hpp"
#include "ufw/error.hpp"
#include "ufw/normalize.hpp"
#include "ufw/utf8.hpp"

using ufw::NormalizePolicy;
using ufw::normalize_text;

TEST_CASE("normalize: worked examples") {
  const NormalizePolicy p;
  CHECK(normalize_text("", p) == "");
  CHECK(normalize_text("H\xC3\xA9llo   World", p) == "hello world");
  CHECK(normalize_text("a\n\n\n\nb", p) == "a\n\nb");
  CHECK(normalize_text("x\t\ty", p) == "x\t\ty");
}

TEST_CASE("normalize: decomposed input loses its marks too") {
  // "e" + U+0301 combining acute
  CHECK(normalize_text("Caf" "e\xCC\x81", {}) == "cafe");
  // U+00C9 uppercase E acute -> e
  CHECK(normalize_text("\xC3\x89t\xC3\xA9", {}) == "ete");
}

TEST_CASE("normalize: non-Latin cased scripts are lowercased") {
  // Cyrillic "ПРИВЕТ" -> "привет"
  CHECK(normalize_text("\xD0\x9F\xD0\xA0\xD0\x98\xD0\x92\xD0\x95\xD0\xA2", {}) ==
        "\xD0\xBF\xD1\x80\xD0\xB8\xD0\xB2\xD0\xB5\xD1\x82");
}

TEST_CASE("normalize: dotted capital I reaches a fixed point") {
  // U+0130 lowercases to i + U+0307; the mark is then stripped.
  const std::string once = normalize_text("\xC4\xB0stanbul", {});
  CHECK(once == "istanbul");
  CHECK(normalize_text(once, {}) == once);
}

TEST_CASE("normalize: policy switches") {
  NormalizePolicy keep_case;
  keep_case.lowercase = false;
  CHECK(normalize_text("H\xC3\xA9llo", keep_case) == "Hello");

  NormalizePolicy keep_marks;
  keep_marks.strip_diacritics = false;
  CHECK(normalize_text("H\xC3\xA9llo", keep_marks) == "h\xC3\xA9llo");

  NormalizePolicy spaces;
  spaces.collapse_spaces = false;
  CHECK(normalize_text("a   b", spaces) == "a   b");

  NormalizePolicy one_newline;
  one_newline.max_consecutive_newlines = 1;
  CHECK(normalize_text("a\n\n\nb\nc", one_newline) == "a\nb\nc");
}

TEST_CASE("normalize: carriage returns and other whitespace survive") {
  CHECK(normalize_text("a\r\n\r\nb", {}) == "a\r\n\r\nb");
  // NBSP is not collapsed.
  CHECK(normalize_text("a\xC2\xA0\xC2\xA0 b", {}) == "a\xC2\xA0\xC2\xA0 b");
}

TEST_CASE("normalize: invalid UTF-8 reports the offset") {
  try {
    normalize_text("ok\xC3(", {});
    FAIL("expected InvalidUtf8");
  } catch (const ufw::Error& e) {
    CHECK(e.code() == ufw::ErrorCode::kInvalidUtf8);
    CHECK(std::string(e.what()).find("byte 2") != std::string::npos);
  }
  CHECK_THROWS_AS(normalize_text("\xED\xA0\x80", {}), ufw::Error);  // surrogate
  CHECK_THROWS_AS(normalize_text("\xC0\xAF", {}), ufw::Error);      // overlong
}

TEST_CASE("normalize: invalid policy") {
  NormalizePolicy bad;
  bad.max_consecutive_newlines = 0;
  CHECK_THROWS_AS(normalize_text("x", bad), ufw::Error);
}

TEST_CASE("normalize: properties over generated text") {
  std::mt19937_64 rng(7);
  const NormalizePolicy p;
  NormalizePolicy no_lower;
  no_lower.lowercase = false;
  for (int i = 0; i < 2000; ++i) {
    const std::string raw = ufwtest::random_unicode_text(rng, 60);
    REQUIRE(ufw::utf8::is_valid(raw));
    const std::string out = normalize_text(raw, p);
    CHECK(normalize_text(out, p) == out);
    CHECK(ufwtest::count_char(out, '\t') == ufwtest::count_char(raw, '\t'));
    CHECK(ufwtest::count_char(out, '\r') == ufwtest::count_char(raw, '\r'));
    CHECK(out.find("\n\n\n") == std::string::npos);
    CHECK(out.find("  ") == std::string::npos);
    CHECK(normalize_text(raw, p) == out);
    // Mark removal alone never grows the text.
    CHECK(normalize_text(raw, no_lower).size() <= ufwtest::nfd(raw).size());
  }
}
