// SPDX-License-Identifier: Apache-2.0
#include "demo/types.hpp"

#include <algorithm>
#include <cctype>

#include "demo/errors.hpp"

namespace demo {

std::string_view modality_tag(Modality m) {
  switch (m) {
    case Modality::R: return "R";
    case Modality::N: return "N";
    case Modality::T: return "T";
  }
  return "?";
}

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::R: return "RGB";
    case Modality::N: return "NIR";
    case Modality::T: return "TIR";
  }
  return "?";
}

Modality parse_modality(std::string_view text) {
  std::string up(text);
  std::transform(up.begin(), up.end(), up.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::toupper(ch)); });
  for (Modality m : kModalities) {
    if (up == modality_tag(m) || up == modality_name(m)) return m;
  }
  if (up == "NI") return Modality::N;
  if (up == "TI") return Modality::T;
  throw InputError("unknown modality '" + std::string(text) + "'");
}

}  // namespace demo
