#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>

namespace esr {

/// Ia = calcium oxalate monohydrate (COM), IIb = calcium oxalate dihydrate
/// (COD), IIIb = uric acid (UA).
enum class Morphology : std::uint8_t { Ia = 0, IIb = 1, IIIb = 2 };

inline constexpr std::array<Morphology, 3> kAllMorphologies = {Morphology::Ia, Morphology::IIb, Morphology::IIIb};

/// The five supported classes, in the fixed order used for network outputs,
/// confusion-matrix rows/columns and argmax tie-breaking.
enum class ClassLabel : std::uint8_t { Ia = 0, IaIIb = 1, IaIIIb = 2, IIb = 3, IIIb = 4 };

inline constexpr std::size_t kNumClasses = 5;
inline constexpr std::array<ClassLabel, kNumClasses> kAllClasses = {
    ClassLabel::Ia, ClassLabel::IaIIb, ClassLabel::IaIIIb, ClassLabel::IIb, ClassLabel::IIIb};
inline constexpr std::array<ClassLabel, 3> kPureClasses = {ClassLabel::Ia, ClassLabel::IIb, ClassLabel::IIIb};
inline constexpr std::array<ClassLabel, 2> kMixedClasses = {ClassLabel::IaIIb, ClassLabel::IaIIIb};

constexpr std::size_t index_of(ClassLabel c) { return static_cast<std::size_t>(c); }
constexpr std::size_t index_of(Morphology m) { return static_cast<std::size_t>(m); }

/// Small set of morphologies (bit i = Morphology i).
class MorphologySet {
 public:
  constexpr MorphologySet() = default;
  constexpr MorphologySet(std::initializer_list<Morphology> ms) {
    for (auto m : ms) {
      insert(m);
    }
  }

  constexpr void insert(Morphology m) { bits_ |= static_cast<std::uint8_t>(1u << index_of(m)); }
  constexpr bool contains(Morphology m) const { return (bits_ >> index_of(m)) & 1u; }
  constexpr std::size_t size() const { return std::size_t(bits_ & 1u) + ((bits_ >> 1) & 1u) + ((bits_ >> 2) & 1u); }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint8_t bits() const { return bits_; }
  constexpr bool operator==(const MorphologySet&) const = default;

 private:
  std::uint8_t bits_ = 0;
};

/// Throws ValidationError("unsupported class ...") for sets outside the five classes.
ClassLabel class_of(MorphologySet components);
MorphologySet components_of(ClassLabel label);
bool is_mixed(ClassLabel label);

std::string_view to_string(Morphology m);
std::string_view to_string(ClassLabel c);
/// File-name safe token ("Ia_IIb").
std::string_view slug(ClassLabel c);

Morphology parse_morphology(std::string_view token);
/// Accepts "Ia", "IIb", "IIIb", "Ia+IIb", "Ia+IIIb" (component order free).
/// Unknown morphology tokens and unsupported combinations throw ValidationError.
ClassLabel parse_class(std::string_view token);

}  // namespace esr
