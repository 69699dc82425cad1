#include "fbseg/losses.hpp"

namespace fbseg {

const char* loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::BceDice: return "bce_dice";
    case LossMode::FocalDice: return "focal_dice";
  }
  return "unknown";
}

LossMode parse_loss_mode(const std::string& s) {
  if (s == "bce_dice") return LossMode::BceDice;
  if (s == "focal_dice") return LossMode::FocalDice;
  throw ValidationError("unknown loss mode '" + s + "' (expected bce_dice|focal_dice)");
}

void LossConfig::validate() const {
  if (!(focal_gamma >= 0)) throw ValidationError("loss.focal_gamma must be >= 0");
  if (!(dice_epsilon > 0)) throw ValidationError("loss.dice_epsilon must be > 0");
  if (!(probability_clamp > 0 && probability_clamp < 0.5)) {
    throw ValidationError("loss.probability_clamp must be in (0, 0.5)");
  }
}

}  // namespace fbseg
