#pragma once

#include <array>
#include <cstddef>
#include <string_view>

namespace dashfusion {

enum class Modality : std::size_t { text = 0, audio = 1, vision = 2 };

inline constexpr std::array<Modality, 3> kModalities{Modality::text, Modality::audio, Modality::vision};

inline std::string_view modality_name(Modality m) {
    switch (m) {
        case Modality::text: return "text";
        case Modality::audio: return "audio";
        case Modality::vision: return "vision";
    }
    return "?";
}

}  // namespace dashfusion
