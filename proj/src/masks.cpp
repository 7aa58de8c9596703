#include "roleattn/masks.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "roleattn/errors.hpp"

namespace roleattn {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

RoleMask blocked(Role role, std::size_t n) {
    return RoleMask{role, Tensor({n, n}, kNegInf)};
}

bool is_major_relation(std::string_view deprel) {
    return deprel == "nsubj" || deprel == "dobj" || deprel == "obj" || deprel == "amod" ||
           deprel == "advmod";
}

template <class Keep>
RoleMask edge_mask(Role role, const Sentence& s, Fallback fb, Keep keep) {
    RoleMask m = blocked(role, s.length());
    for (const Token& t : s.tokens) {
        if (!t.head || *t.head == 0 || !keep(t)) continue;
        const std::size_t i = t.index - 1, h = *t.head - 1;
        m.values.at(i, h) = 0.0;
        m.values.at(h, i) = 0.0;
    }
    return fb == Fallback::Apply ? apply_fallback(std::move(m), s.length()) : m;
}

bool row_feasible(const Tensor& t, std::size_t i) {
    for (double v : t.row(i))
        if (v == 0.0) return true;
    return false;
}

}  // namespace

std::string_view role_name(Role r) {
    switch (r) {
        case Role::RareW: return "rarew";
        case Role::Seprat: return "seprat";
        case Role::DepSyn: return "depsyn";
        case Role::MajRel: return "majrel";
        case Role::RelPos: return "relpos";
        case Role::Padding: return "padding";
    }
    return "?";
}

std::optional<Role> parse_role(std::string_view name) {
    for (Role r : {Role::RareW, Role::Seprat, Role::DepSyn, Role::MajRel, Role::RelPos,
                   Role::Padding}) {
        if (role_name(r) == name) return r;
    }
    return std::nullopt;
}

std::vector<Role> parse_roles(std::string_view list) {
    std::vector<Role> out;
    std::size_t start = 0;
    while (start <= list.size()) {
        const auto comma = list.find(',', start);
        std::string_view item = list.substr(start, comma - start);
        while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
        while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
        if (!item.empty()) {
            auto r = parse_role(item);
            if (!r) throw ConfigError("unknown role '" + std::string(item) + "'");
            if (*r != Role::Padding && std::find(out.begin(), out.end(), *r) != out.end()) {
                throw ConfigError("duplicate role '" + std::string(item) + "'");
            }
            out.push_back(*r);
        }
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string join_roles(const std::vector<Role>& roles) {
    std::string out;
    for (std::size_t i = 0; i < roles.size(); ++i) {
        if (i) out += ',';
        out += role_name(roles[i]);
    }
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> RoleMask::zeros() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < n(); ++i)
        for (std::size_t j = 0; j < values.cols(); ++j)
            if (values.at(i, j) == 0.0) out.emplace_back(i, j);
    return out;
}

bool is_separator(std::string_view form) {
    static const std::set<std::string_view> kSeparators = {",", ";", ".", "?", "!",
                                                           "[SEP]", "[START]", "[END]"};
    return kSeparators.contains(form);
}

RoleMask rare_words_mask(const Sentence& s, const Vocabulary& v) {
    RoleMask m = blocked(Role::RareW, s.length());
    for (std::size_t j : rare_token_indices(s, v))
        for (std::size_t i = 0; i < s.length(); ++i) m.values.at(i, j) = 0.0;
    return m;
}

RoleMask separator_mask(const Sentence& s, Fallback fb) {
    RoleMask m = blocked(Role::Seprat, s.length());
    for (std::size_t j = 0; j < s.length(); ++j) {
        if (!is_separator(s.tokens[j].form)) continue;
        for (std::size_t i = 0; i < s.length(); ++i) m.values.at(i, j) = 0.0;
    }
    return fb == Fallback::Apply ? apply_fallback(std::move(m), s.length()) : m;
}

RoleMask dep_syntax_mask(const Sentence& s, Fallback fb) {
    return edge_mask(Role::DepSyn, s, fb, [](const Token&) { return true; });
}

RoleMask major_relations_mask(const Sentence& s, Fallback fb) {
    return edge_mask(Role::MajRel, s, fb,
                     [](const Token& t) { return is_major_relation(t.deprel); });
}

RoleMask relative_position_mask(std::size_t n) {
    RoleMask m = blocked(Role::RelPos, n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i == 0 ? 0 : i - 1;
        const std::size_t hi = std::min(n - 1, i + 1);
        for (std::size_t j = lo; j <= hi; ++j) m.values.at(i, j) = 0.0;
    }
    return m;
}

RoleMask padding_mask(std::size_t n_valid, std::size_t n) {
    if (n_valid > n) {
        throw ShapeError("padding_mask: valid length " + std::to_string(n_valid) +
                         " exceeds width " + std::to_string(n));
    }
    RoleMask m = blocked(Role::Padding, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n_valid; ++j) m.values.at(i, j) = 0.0;
    return m;
}

RoleMask combine(const RoleMask& role, const RoleMask& pad) {
    if (!role.values.same_shape(pad.values)) {
        throw ShapeError("combine: mask shapes differ " + shape_string(role.values.shape()) +
                         " vs " + shape_string(pad.values.shape()));
    }
    RoleMask out{role.role, role.values};
    for (std::size_t k = 0; k < out.values.size(); ++k)
        out.values[k] = std::min(out.values[k], pad.values[k]);
    return apply_fallback(std::move(out), out.n());
}

RoleMask apply_fallback(RoleMask m, std::size_t n_valid) {
    const std::size_t rows = std::min(n_valid, m.n());
    for (std::size_t i = 0; i < rows; ++i)
        if (!row_feasible(m.values, i)) m.values.at(i, i) = 0.0;
    return m;
}

RoleMask build_role_mask(Role role, const Sentence& s, const Vocabulary& v) {
    switch (role) {
        case Role::RareW: return rare_words_mask(s, v);
        case Role::Seprat: return separator_mask(s);
        case Role::DepSyn: return dep_syntax_mask(s);
        case Role::MajRel: return major_relations_mask(s);
        case Role::RelPos: return relative_position_mask(s.length());
        case Role::Padding: return padding_mask(s.length(), s.length());
    }
    throw ConfigError("unhandled role");
}

RoleMask pad_to_width(const RoleMask& m, std::size_t width) {
    const std::size_t n = m.n();
    if (n > width) {
        throw ShapeError("pad_to_width: mask of size " + std::to_string(n) +
                         " does not fit width " + std::to_string(width));
    }
    RoleMask out = blocked(m.role, width);
    for (std::size_t i = 0; i < width; ++i) {
        for (std::size_t j = 0; j < n; ++j) out.values.at(i, j) = i < n ? m.values.at(i, j) : 0.0;
    }
    return out;
}

const Tensor& MaskSet::for_role(Role r) const {
    if (r == Role::Padding) return padding;
    auto it = roles.find(r);
    if (it == roles.end()) {
        throw ConfigError("no mask prepared for role '" + std::string(role_name(r)) + "'");
    }
    return it->second;
}

MaskSet build_mask_set(const Sentence& s, const Vocabulary& v, const std::vector<Role>& roles,
                       std::size_t width) {
    const RoleMask pad = padding_mask(s.length(), width);
    MaskSet out;
    out.padding = pad.values;
    for (Role r : roles) {
        if (r == Role::Padding || out.roles.contains(r)) continue;
        out.roles.emplace(r, combine(pad_to_width(build_role_mask(r, s, v), width), pad).values);
    }
    return out;
}

void write_mask_record(std::ostream& os, const std::string& sentence_id, const RoleMask& m) {
    os << sentence_id << '\t' << role_name(m.role) << '\t' << m.n() << '\t';
    bool first = true;
    for (auto [i, j] : m.zeros()) {
        if (!first) os << ' ';
        os << i + 1 << ',' << j + 1;
        first = false;
    }
    os << '\n';
}

std::vector<MaskRecord> read_mask_records(std::istream& is) {
    std::vector<MaskRecord> out;
    std::string line;
    std::size_t line_no = 0;
    auto to_size = [&](std::string_view s) {
        std::size_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) {
            throw ParseError("bad integer '" + std::string(s) + "' in mask record", line_no);
        }
        return v;
    };
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string_view> cols;
        std::string_view rest = line;
        for (int c = 0; c < 3; ++c) {
            const auto tab = rest.find('\t');
            if (tab == std::string_view::npos) throw ParseError("mask record needs 4 fields", line_no);
            cols.push_back(rest.substr(0, tab));
            rest.remove_prefix(tab + 1);
        }
        const auto role = parse_role(cols[1]);
        if (!role) throw ParseError("unknown role '" + std::string(cols[1]) + "'", line_no);
        const std::size_t n = to_size(cols[2]);
        RoleMask m = blocked(*role, n);
        std::istringstream pairs{std::string(rest)};
        std::string pair;
        while (pairs >> pair) {
            const auto comma = pair.find(',');
            if (comma == std::string::npos) throw ParseError("bad coordinate '" + pair + "'", line_no);
            const std::size_t i = to_size(std::string_view(pair).substr(0, comma));
            const std::size_t j = to_size(std::string_view(pair).substr(comma + 1));
            if (i == 0 || j == 0 || i > n || j > n) {
                throw ParseError("coordinate '" + pair + "' outside 1.." + std::to_string(n), line_no);
            }
            m.values.at(i - 1, j - 1) = 0.0;
        }
        out.push_back(MaskRecord{std::string(cols[0]), std::move(m)});
    }
    return out;
}

std::string render_mask_grid(const Sentence& s, const RoleMask& m) {
    const std::size_t n = m.n();
    std::vector<std::string> labels(n);
    for (std::size_t i = 0; i < n; ++i)
        labels[i] = i < s.length() ? s.tokens[i].form : std::string("<pad>");
    std::size_t row_w = 0;
    for (const auto& l : labels) row_w = std::max(row_w, l.size());

    std::ostringstream os;
    os << "role " << role_name(m.role) << " (n=" << n << ")\n";
    os << std::string(row_w + 1, ' ');
    for (const auto& l : labels) os << l << ' ';
    os << '\n';
    for (std::size_t i = 0; i < n; ++i) {
        os << labels[i] << std::string(row_w - labels[i].size() + 1, ' ');
        for (std::size_t j = 0; j < n; ++j) {
            os << (m.allowed(i, j) ? '.' : '#') << std::string(labels[j].size(), ' ');
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace roleattn
