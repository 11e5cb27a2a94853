#pragma once

// cereal hooks for the tensor and bank types. Values are written as raw
// IEEE doubles, so a save/load cycle reproduces them bit for bit.

#include "repblend/csrl.hpp"
#include "repblend/pprb.hpp"
#include "repblend/types.hpp"

#include <cereal/cereal.hpp>
#include <cereal/types/string.hpp>
#include <cereal/types/vector.hpp>

#include <cstdint>
#include <sstream>
#include <vector>

namespace cereal {

template <class Archive>
void save(Archive& ar, const repblend::Matrix& m) {
  ar(static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols()));
  ar(binary_data(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double)));
}

template <class Archive>
void load(Archive& ar, repblend::Matrix& m) {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  ar(rows, cols);
  m.resize(rows, cols);
  ar(binary_data(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double)));
}

}  // namespace cereal

namespace repblend {

template <class Archive>
void serialize(Archive& ar, FeatureShape& shape) {
  std::int64_t c = shape.channels, h = shape.height, w = shape.width;
  ar(c, h, w);
  shape = FeatureShape{c, h, w};
}

template <class Archive>
void serialize(Archive& ar, PrototypeBank& bank) {
  std::int64_t categories = bank.categories;
  ar(bank.level, bank.built_at_epoch, bank.shape, categories, bank.prototypes, bank.occupancy,
     bank.usable, bank.backfilled);
  bank.categories = categories;
}

}  // namespace repblend
