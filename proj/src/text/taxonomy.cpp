#include <string>

#include "eaxl/error.hpp"
#include "eaxl/text.hpp"

namespace eaxl {

namespace {

struct Group {
  std::string_view coarse;
  std::vector<std::string_view> fine;
};

const std::vector<Group>& groups() {
  static const std::vector<Group> kGroups = {
      {"excited", {"excited", "surprised", "joyful"}},
      {"afraid", {"afraid", "terrified", "anxious", "apprehensive"}},
      {"disgusted", {"disgusted", "embarrassed", "guilty", "ashamed"}},
      {"annoyed", {"angry", "annoyed", "jealous", "furious"}},
      {"grateful", {"faithful", "trusting", "grateful", "caring", "hopeful"}},
      {"disappointed", {"sad", "disappointed", "devastated", "lonely", "nostalgic", "sentimental"}},
      {"impressed", {"proud", "impressed", "content"}},
      {"prepared", {"anticipating", "prepared", "confident"}},
  };
  return kGroups;
}

}  // namespace

EmotionTaxonomy::EmotionTaxonomy() {
  const auto& gs = groups();
  for (std::size_t c = 0; c < gs.size(); ++c) {
    coarse_[c] = gs[c].coarse;
    for (auto fine : gs[c].fine) {
      fine_.push_back(fine);
      fine_to_coarse_.emplace(std::string(fine), c);
    }
  }
}

const EmotionTaxonomy& EmotionTaxonomy::standard() {
  static const EmotionTaxonomy kTaxonomy;
  return kTaxonomy;
}

std::size_t EmotionTaxonomy::coarse_id(std::string_view fine) const {
  auto it = fine_to_coarse_.find(std::string(fine));
  if (it == fine_to_coarse_.end()) throw DataError("unknown fine emotion '" + std::string(fine) + "'");
  return it->second;
}

std::optional<std::size_t> EmotionTaxonomy::find_coarse(std::string_view coarse) const {
  for (std::size_t c = 0; c < coarse_.size(); ++c) {
    if (coarse_[c] == coarse) return c;
  }
  return std::nullopt;
}

std::vector<std::string_view> EmotionTaxonomy::group(std::size_t coarse_id) const {
  if (coarse_id >= kNumCoarseEmotions) throw DataError("coarse emotion id out of range");
  return groups()[coarse_id].fine;
}

}  // namespace eaxl
