#pragma once

#include <array>
#include <cstdint>

namespace robustlens {

/// Fixed 256-entry jet colormap (RGB).
extern const std::array<std::array<std::uint8_t, 3>, 256> kJetColormap;

}  // namespace robustlens
