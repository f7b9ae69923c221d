#pragma once

// Averaged cross-validation confusion matrices printed for the clinical
// surface (a) and section (b) networks, rows predicted, columns actual, both
// in class order Ia, Ia+IIb, Ia+IIIb, IIb, IIIb.

#include "esr/evaluation.hpp"

namespace esr::fixture {

inline ConfusionMatrix surface_matrix() {
  ConfusionMatrix m;
  m.counts = {{{51.8, 3.5, 0.5, 0.8, 0.0},
               {3.8, 13.0, 0.9, 2.2, 0.2},
               {0.3, 0.1, 1.5, 0.1, 0.0},
               {1.0, 3.0, 0.1, 12.3, 0.0},
               {0.1, 0.4, 0.0, 0.6, 8.8}}};
  return m;
}

inline ConfusionMatrix section_matrix() {
  ConfusionMatrix m;
  m.counts = {{{37.8, 2.1, 0.5, 0.4, 0.1},
               {1.4, 4.6, 0.5, 1.8, 0.7},
               {0.6, 0.8, 5.2, 0.1, 0.6},
               {0.0, 1.2, 0.1, 6.2, 0.5},
               {0.3, 0.3, 0.7, 0.5, 3.9}}};
  return m;
}

// Printed marginals and table values (percent).
inline constexpr double kSurfaceIaSensitivity = 91.0;
inline constexpr double kSurfaceIaPpv = 92.0;
inline constexpr double kSurfaceOverall = 83.0;
inline constexpr double kSectionOverall = 81.0;
inline constexpr double kSurfaceIaIIbBoth = 65.0;
inline constexpr double kSurfaceAtLeastIIbPrinted = 70.0;
inline constexpr double kSurfaceAtLeastIIbPrintedStd = 6.0;
inline constexpr double kPrintedRounding = 0.5;

// Hot-spot rates (percent): on-stone among correct, outside-stone and
// endoscope-tip among misclassified, per view.
inline constexpr double kInStoneCorrect = 98.0;
inline constexpr double kSurfaceOutside = 33.0;
inline constexpr double kSectionOutside = 25.0;
inline constexpr double kSurfaceTip = 5.0;
inline constexpr double kSectionTip = 2.0;

// Surface test-side counts of the clinical split.
inline constexpr double kSurfaceTestTotal = 105.0;
inline constexpr std::array<double, kNumClasses> kSurfaceTestByClass = {57, 20, 3, 16, 9};

}  // namespace esr::fixture
