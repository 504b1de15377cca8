#pragma once

#include <array>
#include <string>
#include <string_view>

namespace lesion {

/// Seven dermoscopic lesion classes, indexed in table order.
enum class LesionClass : int { AKIEC = 0, BCC, BKL, DF, MEL, NV, VASC };

inline constexpr int kNumLesionClasses = 7;
inline constexpr std::array<std::string_view, kNumLesionClasses> kLesionClassNames{
    "AKIEC", "BCC", "BKL", "DF", "MEL", "NV", "VASC"};

/// Throws lesion::Error("unknown class ...") for anything outside the set.
int parse_lesion_class(std::string_view name);
std::string lesion_class_name(int index);

}  // namespace lesion
