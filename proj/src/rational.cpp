// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "moelab/rational.hpp"

#include <cctype>
#include <limits>

namespace moelab {

namespace {

__int128 gcd_wide(__int128 a, __int128 b) {
  if (a < 0) a = -a;
  if (b < 0) b = -b;
  while (b != 0) {
    const __int128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

std::int64_t parse_int(const std::string& s, const std::string& whole) {
  if (s.empty()) throw ParseError("empty number in rational '" + whole + "'");
  std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
  if (i == s.size()) throw ParseError("bad rational '" + whole + "'");
  for (std::size_t j = i; j < s.size(); ++j) {
    if (!std::isdigit(static_cast<unsigned char>(s[j]))) {
      throw ParseError("bad rational '" + whole + "'");
    }
  }
  try {
    return std::stoll(s);
  } catch (const std::out_of_range&) {
    throw ParseError("rational '" + whole + "' out of range");
  }
}

}  // namespace

Rational Rational::from_wide(__int128 num, __int128 den) {
  if (den == 0) throw ConfigError("rational with zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const __int128 g = gcd_wide(num, den);
  if (g > 1) {
    num /= g;
    den /= g;
  }
  constexpr auto kMax = std::numeric_limits<std::int64_t>::max();
  if (num > kMax || num < -kMax || den > kMax) {
    throw ConfigError("rational overflow");
  }
  Rational r;
  r.num_ = static_cast<std::int64_t>(num);
  r.den_ = static_cast<std::int64_t>(den);
  return r;
}

void Rational::normalize() { *this = from_wide(num_, den_); }

Rational Rational::parse(const std::string& raw) {
  std::string text;
  for (char c : raw) {
    if (!std::isspace(static_cast<unsigned char>(c))) text += c;
  }
  if (const auto slash = text.find('/'); slash != std::string::npos) {
    const auto num = parse_int(text.substr(0, slash), raw);
    const auto den = parse_int(text.substr(slash + 1), raw);
    if (den == 0) throw ParseError("zero denominator in '" + raw + "'");
    return Rational(num, den);
  }
  if (const auto dot = text.find('.'); dot != std::string::npos) {
    const std::string int_part = text.substr(0, dot);
    const std::string frac = text.substr(dot + 1);
    if (frac.size() > 15) throw ParseError("too many decimals in '" + raw + "'");
    std::int64_t den = 1;
    for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
    const bool negative = !int_part.empty() && int_part[0] == '-';
    const std::string digits =
        (int_part.empty() || int_part == "-" || int_part == "+")
            ? "0"
            : int_part;
    const auto whole = parse_int(digits, raw);
    const auto part = frac.empty() ? 0 : parse_int(frac, raw);
    Rational r = Rational(whole) + Rational(negative ? -part : part, den);
    return r;
  }
  return Rational(parse_int(text, raw));
}

}  // namespace moelab
