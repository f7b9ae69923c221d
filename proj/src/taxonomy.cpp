#include "esr/taxonomy.hpp"

#include "esr/error.hpp"

namespace esr {

ClassLabel class_of(MorphologySet components) {
  for (auto c : kAllClasses) {
    if (components_of(c) == components) {
      return c;
    }
  }
  std::string desc;
  for (auto m : kAllMorphologies) {
    if (components.contains(m)) {
      desc += desc.empty() ? "" : "+";
      desc += to_string(m);
    }
  }
  throw ValidationError("unsupported class: {" + desc + "}");
}

MorphologySet components_of(ClassLabel label) {
  switch (label) {
    case ClassLabel::Ia: return {Morphology::Ia};
    case ClassLabel::IIb: return {Morphology::IIb};
    case ClassLabel::IIIb: return {Morphology::IIIb};
    case ClassLabel::IaIIb: return {Morphology::Ia, Morphology::IIb};
    case ClassLabel::IaIIIb: return {Morphology::Ia, Morphology::IIIb};
  }
  return {};
}

bool is_mixed(ClassLabel label) { return components_of(label).size() == 2; }

std::string_view to_string(Morphology m) {
  switch (m) {
    case Morphology::Ia: return "Ia";
    case Morphology::IIb: return "IIb";
    case Morphology::IIIb: return "IIIb";
  }
  return "?";
}

std::string_view to_string(ClassLabel c) {
  switch (c) {
    case ClassLabel::Ia: return "Ia";
    case ClassLabel::IaIIb: return "Ia+IIb";
    case ClassLabel::IaIIIb: return "Ia+IIIb";
    case ClassLabel::IIb: return "IIb";
    case ClassLabel::IIIb: return "IIIb";
  }
  return "?";
}

std::string_view slug(ClassLabel c) {
  switch (c) {
    case ClassLabel::Ia: return "Ia";
    case ClassLabel::IaIIb: return "Ia_IIb";
    case ClassLabel::IaIIIb: return "Ia_IIIb";
    case ClassLabel::IIb: return "IIb";
    case ClassLabel::IIIb: return "IIIb";
  }
  return "?";
}

Morphology parse_morphology(std::string_view token) {
  for (auto m : kAllMorphologies) {
    if (to_string(m) == token) {
      return m;
    }
  }
  throw ValidationError("unknown label token: '" + std::string(token) + "'");
}

ClassLabel parse_class(std::string_view token) {
  MorphologySet set;
  std::size_t parts = 0;
  std::size_t start = 0;
  while (true) {
    const auto plus = token.find('+', start);
    const auto part = token.substr(start, plus == std::string_view::npos ? std::string_view::npos : plus - start);
    const auto m = parse_morphology(part);
    if (set.contains(m)) {
      throw ValidationError("unsupported class: '" + std::string(token) + "'");
    }
    set.insert(m);
    ++parts;
    if (plus == std::string_view::npos) {
      break;
    }
    start = plus + 1;
  }
  if (parts > 2) {
    throw ValidationError("unsupported class: '" + std::string(token) + "'");
  }
  return class_of(set);
}

}  // namespace esr
