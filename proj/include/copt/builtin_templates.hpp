#pragma once

#include <array>
#include <string_view>
#include <vector>

namespace copt {

/// Domain attribute lists obtained by asking an LLM
/// "What makes a <DOMAIN> image look <DOMAIN>?". Shipped as static data; the
/// files under data/templates/ carry the same lists.
struct BuiltinDomain {
  std::string_view name;
  std::vector<std::string_view> attributes;
};

inline const std::vector<BuiltinDomain>& builtin_domains() {
  static const std::vector<BuiltinDomain> domains = {
      {"synthetic",
       {"lack of realism", "unusual colors and lighting", "perfect symmetry", "repetitive elements",
        "lack of organic variation", "tiling and tiling artifacts", "overly sharp or soft focus",
        "inconsistent shadows and reflections", "distinctive noise patterns", "regular patterns and grids",
        "lack of depth and perspective", "looks like an inorganic object", "an artistic style or stylization",
        "exaggerated features"}},
      {"real",
       {"natural colors and lighting", "high resolution", "depth and perspective", "organic variation",
        "complex textures", "authentic shadows and reflections", "blurred bokeh background", "lens flare and glare",
        "natural poses and expressions", "environmental integration", "realistic props and objects",
        "accurate reflections in water and glass", "natural compression artifacts", "weather and atmospheric effects",
        "unscripted candid moments", "a tangible sense of scale"}},
      {"day-time",
       {"an abundance of natural light", "bright and vibrant colors", "soft shadows", "warmth in illumination",
        "dynamic range", "natural sky colors", "distinctive sun position", "clear visibility",
        "minimal artificial lighting", "lively and active atmosphere", "natural textures and patterns",
        "shimmering water bodies", "pleasant weather conditions", "outdoor shadows", "minimal noise and grain"}},
      {"night-time",
       {"low light conditions", "dark shadows", "diminished color saturation", "warm artificial lighting",
        "with contrast between light and dark", "point light sources", "visible light trails",
        "with glowing skylines", "with silhouettes and outlines", "with noise and grain", "astrophotography elements",
        "long shadows", "reflective surfaces", "distant atmospheric haze", "a sense of mystery and atmosphere"}},
      {"foggy",
       {"soft, diffused light", "hazy atmosphere", "low contrast", "diminished sharpness and clarity",
        "gradient of opacity", "desaturation of colors", "loss of detail in distance", "diffused light sources",
        "visible water droplets", "muffled soundscape", "ethereal and dreamlike atmosphere",
        "silhouettes and silhouetted forms", "moisture on surfaces", "elongated shadows"}},
      {"rainy",
       {"raindrops on surfaces", "wet and reflective surfaces", "muted colors", "glossy textures",
        "diminished contrast", "blurred backgrounds", "dynamic water movement", "puddles and reflections",
        "umbrellas and rain gear", "dramatic sky", "wet vegetation", "water ripples and disturbances",
        "smeared or distorted lights", "misty atmosphere"}},
      {"snowy",
       {"white blanket of snow", "soft, diffused light", "cool color palette", "snowflakes in motion",
        "crystalline texture", "cold, wintry atmosphere", "footprints and tracks", "snow-covered trees and branches",
        "icy surfaces and frozen water", "winter clothing and gear", "frost and ice crystals",
        "blurred backgrounds and depth of field", "cold breath and condensation", "winter sports and activities"}},
  };
  return domains;
}

}  // namespace copt
