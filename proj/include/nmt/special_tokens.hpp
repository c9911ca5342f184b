#pragma once

namespace nmt {

// Fixed reserved ids shared by vocabularies, the model and checkpoints.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumReserved = 4;

inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kBosToken = "<s>";
inline constexpr const char* kEosToken = "</s>";
inline constexpr const char* kUnkToken = "<unk>";

inline constexpr const char* reserved_token(int id) {
  constexpr const char* kTokens[kNumReserved] = {kPadToken, kBosToken, kEosToken, kUnkToken};
  return kTokens[id];
}

}  // namespace nmt
