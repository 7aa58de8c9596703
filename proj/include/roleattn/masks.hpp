#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "roleattn/corpus.hpp"
#include "roleattn/tensor.hpp"

namespace roleattn {

enum class Role { RareW, Seprat, DepSyn, MajRel, RelPos, Padding };

// Head-assignment order for the five guided roles.
inline constexpr std::array<Role, 5> kGuidedRoles = {Role::RareW, Role::Seprat, Role::DepSyn,
                                                     Role::MajRel, Role::RelPos};

std::string_view role_name(Role r);
std::optional<Role> parse_role(std::string_view name);
// Comma-separated role names; throws ConfigError on unknown or duplicate
// guided roles ("padding" may repeat).
std::vector<Role> parse_roles(std::string_view list);
std::string join_roles(const std::vector<Role>& roles);

// n x n additive attention mask over {0, -inf}. Entry (i, j) governs query
// i attending to key j (0-based).
struct RoleMask {
    Role role = Role::Padding;
    Tensor values;

    std::size_t n() const { return values.rows(); }
    bool allowed(std::size_t i, std::size_t j) const { return values.at(i, j) == 0.0; }
    // Sorted 0-based (i, j) pairs of zero entries.
    std::vector<std::pair<std::size_t, std::size_t>> zeros() const;

    friend bool operator==(const RoleMask&, const RoleMask&) = default;
};

bool is_separator(std::string_view form);

enum class Fallback { Apply, Skip };

RoleMask rare_words_mask(const Sentence& s, const Vocabulary& v);
RoleMask separator_mask(const Sentence& s, Fallback fb = Fallback::Apply);
RoleMask dep_syntax_mask(const Sentence& s, Fallback fb = Fallback::Apply);
RoleMask major_relations_mask(const Sentence& s, Fallback fb = Fallback::Apply);
RoleMask relative_position_mask(std::size_t n);
// Throws ShapeError when n_valid > n.
RoleMask padding_mask(std::size_t n_valid, std::size_t n);

// Elementwise minimum, then fallback over every row. Throws ShapeError on a
// shape mismatch.
RoleMask combine(const RoleMask& role, const RoleMask& pad);
// Sets (i, i) = 0 for each row i < n_valid that has no zero entry.
RoleMask apply_fallback(RoleMask m, std::size_t n_valid);

// Dispatches on role at sentence length. Role::Padding yields all zeros.
RoleMask build_role_mask(Role role, const Sentence& s, const Vocabulary& v);

// Places an n_valid x n_valid role mask in a width x width buffer: PAD key
// columns are -inf in every row, PAD query rows may attend to every valid
// key. The result is then combined with padding_mask(n_valid, width).
RoleMask pad_to_width(const RoleMask& m, std::size_t width);

// Per-example masks at batch width: the padding mask plus one combined
// mask per guided role.
struct MaskSet {
    Tensor padding;
    std::map<Role, Tensor> roles;

    // Role::Padding maps to the padding mask. Throws ConfigError when the
    // role was not prepared.
    const Tensor& for_role(Role r) const;
};

MaskSet build_mask_set(const Sentence& s, const Vocabulary& v, const std::vector<Role>& roles,
                       std::size_t width);

// Sparse line format: "<sentence-id>\t<role>\t<n>\t<i,j> <i,j> ..." with
// 1-based sorted coordinates of zero entries.
void write_mask_record(std::ostream& os, const std::string& sentence_id, const RoleMask& m);

struct MaskRecord {
    std::string sentence_id;
    RoleMask mask;
};
// Throws ParseError on malformed lines. Lines starting with '#' are skipped.
std::vector<MaskRecord> read_mask_records(std::istream& is);

// Text grid: '.' allowed, '#' masked, with token headers.
std::string render_mask_grid(const Sentence& s, const RoleMask& m);

}  // namespace roleattn
