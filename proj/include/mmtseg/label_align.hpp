#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mmtseg/label_map.hpp"

namespace mmtseg {

/// Co-occurrence counts between the labels of two equally sized maps.
/// Row i counts pixels labelled rows[i] in map A; column j pixels labelled
/// cols[j] in map B.
struct OverlapMatrix {
  std::vector<Label> rows;
  std::vector<Label> cols;
  std::vector<std::int64_t> counts;  // rows.size() x cols.size(), row-major

  std::int64_t at(std::size_t i, std::size_t j) const { return counts[i * cols.size() + j]; }
  std::int64_t total() const;
  OverlapMatrix transposed() const;
};

OverlapMatrix overlap_matrix(const LabelMap& a, const LabelMap& b);

enum class MappingDirection { a_to_b, b_to_a };

/// One-to-one relabelling between two label alphabets.
///
/// `pairs` is sorted by source label and covers every source label.  Source
/// labels left unmatched by the assignment are sent to fresh labels outside
/// the target alphabet.
struct LabelMapping {
  std::vector<std::pair<Label, Label>> pairs;
  MappingDirection direction = MappingDirection::a_to_b;
  std::int64_t score = 0;  // total overlap of the matched pairs

  Label operator()(Label source) const;
  bool is_identity() const;
};

/// Maximum-total-overlap matching of rows to columns (Hungarian method on
/// the zero-padded square matrix).  Among optimal matchings the lexicographically
/// smallest sequence of column indices, taken row by row, is returned.
LabelMapping solve_assignment(const OverlapMatrix& overlap);

/// Exhaustive oracle with the same tie-breaking as solve_assignment.
/// Rejects matrices whose smaller side exceeds 8.
LabelMapping brute_force_assignment(const OverlapMatrix& overlap);

LabelMap apply_mapping(const LabelMap& map, const LabelMapping& mapping);

/// Relabels `source` into the label space of `target`.
LabelMap align_labels(const LabelMap& source, const LabelMap& target);

}  // namespace mmtseg
