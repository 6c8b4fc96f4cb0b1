#include "mmtseg/label_align.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace mmtseg {

std::int64_t OverlapMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

OverlapMatrix OverlapMatrix::transposed() const {
  OverlapMatrix t{cols, rows, std::vector<std::int64_t>(counts.size())};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) t.counts[j * rows.size() + i] = at(i, j);
  }
  return t;
}

namespace {

std::unordered_map<Label, std::size_t> index_of(const std::vector<Label>& alphabet) {
  std::unordered_map<Label, std::size_t> idx;
  idx.reserve(alphabet.size());
  for (std::size_t i = 0; i < alphabet.size(); ++i) idx.emplace(alphabet[i], i);
  return idx;
}

// Square zero-padded profit matrix.  Real rows/cols come first.
struct SquareProblem {
  std::size_t n;
  std::vector<std::int64_t> profit;
  std::int64_t at(std::size_t i, std::size_t j) const { return profit[i * n + j]; }
};

SquareProblem pad_square(const OverlapMatrix& s) {
  const std::size_t n = std::max(s.rows.size(), s.cols.size());
  SquareProblem sq{n, std::vector<std::int64_t>(n * n, 0)};
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    for (std::size_t j = 0; j < s.cols.size(); ++j) sq.profit[i * n + j] = s.at(i, j);
  }
  return sq;
}

void validate(const OverlapMatrix& s) {
  if (s.rows.empty() || s.cols.empty()) throw std::invalid_argument("assignment: empty overlap matrix");
  if (s.counts.size() != s.rows.size() * s.cols.size()) {
    throw std::invalid_argument("assignment: overlap counts do not match its alphabets");
  }
  for (auto c : s.counts) {
    if (c < 0) throw std::invalid_argument("assignment: overlap counts must be non-negative");
  }
}

// Turns a row -> column assignment on the padded square into a LabelMapping.
LabelMapping to_mapping(const OverlapMatrix& s, const std::vector<std::size_t>& row_to_col) {
  std::vector<Label> fresh;
  const std::size_t pad_cols = s.rows.size() > s.cols.size() ? s.rows.size() - s.cols.size() : 0;
  for (Label candidate = 0; fresh.size() < pad_cols; ++candidate) {
    if (!std::binary_search(s.cols.begin(), s.cols.end(), candidate)) fresh.push_back(candidate);
  }
  LabelMapping m;
  m.pairs.reserve(s.rows.size());
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    const std::size_t j = row_to_col[i];
    if (j < s.cols.size()) {
      m.pairs.emplace_back(s.rows[i], s.cols[j]);
      m.score += s.at(i, j);
    } else {
      m.pairs.emplace_back(s.rows[i], fresh[j - s.cols.size()]);
    }
  }
  return m;
}

// Minimum-cost assignment with integer potentials (cost = -profit).
// Returns row_to_col and leaves dual potentials in u, v.
std::vector<std::size_t> hungarian(const SquareProblem& sq, std::vector<std::int64_t>& u,
                                   std::vector<std::int64_t>& v) {
  const std::size_t n = sq.n;
  constexpr std::int64_t inf = std::numeric_limits<std::int64_t>::max() / 4;
  auto cost = [&](std::size_t i, std::size_t j) { return -sq.at(i - 1, j - 1); };
  u.assign(n + 1, 0);
  v.assign(n + 1, 0);
  std::vector<std::size_t> owner(n + 1, 0), way(n + 1, 0);  // owner[j]: row matched to column j
  for (std::size_t i = 1; i <= n; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<std::int64_t> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = owner[j0];
      std::int64_t delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const std::int64_t cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[owner[j] - 1] = j - 1;
  return row_to_col;
}

// Every optimal assignment is a perfect matching on the edges that are tight
// for an optimal dual.  Walk the rows in order and move each onto its smallest
// tight column for which the remaining rows can still be perfectly matched.
void make_lexicographic(const SquareProblem& sq, const std::vector<std::int64_t>& u,
                        const std::vector<std::int64_t>& v, std::vector<std::size_t>& row_to_col) {
  const std::size_t n = sq.n;
  std::vector<char> tight(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) tight[i * n + j] = (-sq.at(i, j) - u[i + 1] - v[j + 1]) == 0;
  }
  std::vector<std::size_t> col_to_row(n);
  for (std::size_t i = 0; i < n; ++i) col_to_row[row_to_col[i]] = i;
  std::vector<char> col_fixed(n, 0);
  std::vector<char> seen(n);
  std::vector<std::size_t> queue;

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t current = row_to_col[i];
    for (std::size_t j = 0; j < n && j < current; ++j) {
      if (col_fixed[j] || !tight[i * n + j]) continue;
      // Row r loses column j and must reach `current` by an alternating path
      // over unfixed rows and columns other than j.
      const std::size_t r = col_to_row[j];
      std::fill(seen.begin(), seen.end(), 0);
      seen[j] = 1;
      queue.assign(1, r);
      std::size_t reached = n;
      std::vector<std::size_t> from_row(n, n);  // column -> row that reached it
      for (std::size_t head = 0; head < queue.size() && reached == n; ++head) {
        const std::size_t row = queue[head];
        for (std::size_t c = 0; c < n; ++c) {
          if (seen[c] || col_fixed[c] || !tight[row * n + c]) continue;
          seen[c] = 1;
          from_row[c] = row;
          if (c == current) {
            reached = c;
            break;
          }
          queue.push_back(col_to_row[c]);
        }
      }
      if (reached == n) continue;
      // Flip the path: each row on it takes the column it reached.
      for (std::size_t c = reached;;) {
        const std::size_t row = from_row[c];
        const std::size_t prev = row_to_col[row];
        row_to_col[row] = c;
        col_to_row[c] = row;
        if (row == r) break;
        c = prev;
      }
      row_to_col[i] = j;
      col_to_row[j] = i;
      break;
    }
    col_fixed[row_to_col[i]] = 1;
  }
}

}  // namespace

OverlapMatrix overlap_matrix(const LabelMap& a, const LabelMap& b) {
  if (!a.same_dims(b)) throw std::invalid_argument("overlap_matrix: label maps differ in size");
  OverlapMatrix s{a.alphabet(), b.alphabet(), {}};
  s.counts.assign(s.rows.size() * s.cols.size(), 0);
  const auto ra = index_of(s.rows);
  const auto cb = index_of(s.cols);
  for (std::size_t p = 0; p < a.pixels(); ++p) {
    ++s.counts[ra.at(a.labels[p]) * s.cols.size() + cb.at(b.labels[p])];
  }
  return s;
}

Label LabelMapping::operator()(Label source) const {
  auto it = std::lower_bound(pairs.begin(), pairs.end(), source,
                             [](const auto& pr, Label l) { return pr.first < l; });
  if (it == pairs.end() || it->first != source) {
    throw std::out_of_range("label " + std::to_string(source) + " has no entry in the mapping");
  }
  return it->second;
}

bool LabelMapping::is_identity() const {
  return std::all_of(pairs.begin(), pairs.end(), [](const auto& pr) { return pr.first == pr.second; });
}

LabelMapping solve_assignment(const OverlapMatrix& overlap) {
  validate(overlap);
  const SquareProblem sq = pad_square(overlap);
  std::vector<std::int64_t> u, v;
  auto row_to_col = hungarian(sq, u, v);
  make_lexicographic(sq, u, v, row_to_col);
  return to_mapping(overlap, row_to_col);
}

LabelMapping brute_force_assignment(const OverlapMatrix& overlap) {
  validate(overlap);
  const std::size_t nr = overlap.rows.size();
  const std::size_t nc = overlap.cols.size();
  if (std::min(nr, nc) > 8) throw std::invalid_argument("brute_force_assignment: smaller side exceeds 8");
  const std::size_t n = std::max(nr, nc);
  double combos = 1.0;
  for (std::size_t k = 0; k < std::min(nr, nc); ++k) combos *= static_cast<double>(n - k);
  if (combos > 5e7) throw std::invalid_argument("brute_force_assignment: too many matchings to enumerate");

  // Enumerate injective maps from the smaller side into the larger; the rest
  // of the padded square is filled in ascending order (the lexicographic
  // choice among equal-score completions).
  const bool rows_small = nr <= nc;
  const std::size_t small = rows_small ? nr : nc;
  std::vector<std::size_t> pick(small);
  std::vector<char> taken(n, 0);
  std::vector<std::size_t> best;
  std::int64_t best_score = -1;

  auto complete = [&]() {
    std::vector<std::size_t> row_to_col(nr);
    std::int64_t score = 0;
    if (rows_small) {
      for (std::size_t i = 0; i < nr; ++i) {
        row_to_col[i] = pick[i];
        score += overlap.at(i, pick[i]);
      }
    } else {
      std::vector<char> has(nr, 0);
      for (std::size_t j = 0; j < nc; ++j) {
        row_to_col[pick[j]] = j;
        has[pick[j]] = 1;
        score += overlap.at(pick[j], j);
      }
      std::size_t pad = nc;
      for (std::size_t i = 0; i < nr; ++i) {
        if (!has[i]) row_to_col[i] = pad++;
      }
    }
    if (score > best_score || (score == best_score && row_to_col < best)) {
      best_score = score;
      best = std::move(row_to_col);
    }
  };

  auto recurse = [&](auto& self, std::size_t depth) -> void {
    if (depth == small) {
      complete();
      return;
    }
    for (std::size_t x = 0; x < (rows_small ? nc : nr); ++x) {
      if (taken[x]) continue;
      taken[x] = 1;
      pick[depth] = x;
      self(self, depth + 1);
      taken[x] = 0;
    }
  };
  recurse(recurse, 0);
  return to_mapping(overlap, best);
}

LabelMap apply_mapping(const LabelMap& map, const LabelMapping& mapping) {
  std::unordered_map<Label, Label> table;
  table.reserve(mapping.pairs.size());
  for (const auto& [from, to] : mapping.pairs) table.emplace(from, to);
  LabelMap out = map;
  for (auto& l : out.labels) {
    auto it = table.find(l);
    if (it == table.end()) {
      throw std::invalid_argument("apply_mapping: label " + std::to_string(l) + " is not covered by the mapping");
    }
    l = it->second;
  }
  return out;
}

LabelMap align_labels(const LabelMap& source, const LabelMap& target) {
  return apply_mapping(source, solve_assignment(overlap_matrix(source, target)));
}

}  // namespace mmtseg
