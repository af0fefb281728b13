#pragma once

namespace udmt {

// Reserved ids shared by the tokenizer, the model and the objectives.
// Language tags <2xx> follow at kFirstLanguageTagId, one per language,
// before any learned subword.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kMaskId = 3;
inline constexpr int kFirstLanguageTagId = 4;

}  // namespace udmt
