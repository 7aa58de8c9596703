#include "roleattn/corpus.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace roleattn {

namespace {

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find('\t', start);
        out.push_back(line.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::optional<std::size_t> parse_index(std::string_view s) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

// "# key = value" -> value when the key matches.
std::optional<std::string> comment_value(std::string_view line, std::string_view key) {
    std::string_view body = trim(line.substr(1));
    if (body.substr(0, key.size()) != key) return std::nullopt;
    body = trim(body.substr(key.size()));
    if (body.empty() || body.front() != '=') return std::nullopt;
    return std::string(trim(body.substr(1)));
}

struct Block {
    std::size_t first_line = 0;
    std::optional<std::string> id;
    std::optional<std::string> label;
    std::vector<Token> tokens;
    std::optional<ParseIssue> error;
    bool any_head = false;
    bool any_missing_head = false;
};

void finish_block(Block& b, std::size_t ordinal, ParseResult& out) {
    const std::string id = b.id.value_or(std::to_string(ordinal));
    auto fail = [&](std::size_t line, std::string msg) {
        out.errors.push_back(ParseIssue{line, id, std::move(msg)});
    };
    if (b.error) {
        fail(b.error->line, b.error->message);
        return;
    }
    if (b.tokens.empty()) return;  // comment-only block
    const std::size_t n = b.tokens.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (b.tokens[i].index != i + 1) {
            fail(b.first_line, "token ids are not contiguous from 1 (found " +
                                   std::to_string(b.tokens[i].index) + " at position " +
                                   std::to_string(i + 1) + ")");
            return;
        }
    }
    Sentence s;
    s.id = id;
    s.label = b.label;
    if (b.any_head) {
        if (b.any_missing_head) {
            fail(b.first_line, "HEAD column is only partially annotated");
            return;
        }
        std::size_t roots = 0;
        for (const Token& t : b.tokens) {
            if (*t.head > n) {
                fail(b.first_line, "HEAD " + std::to_string(*t.head) + " of token " +
                                       std::to_string(t.index) + " exceeds sentence length " +
                                       std::to_string(n));
                return;
            }
            if (*t.head == t.index) {
                fail(b.first_line, "token " + std::to_string(t.index) + " is its own head");
                return;
            }
            roots += *t.head == 0;
        }
        if (roots != 1) {
            fail(b.first_line, "expected exactly one root, found " + std::to_string(roots));
            return;
        }
        s.parsed = true;
    }
    s.tokens = std::move(b.tokens);
    out.sentences.push_back(std::move(s));
}

}  // namespace

std::string normalize_deprel(std::string_view deprel) {
    std::string out(deprel.substr(0, deprel.find(':')));
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

ParseResult parse_conllu(std::istream& in) {
    ParseResult out;
    Block block;
    std::size_t ordinal = 0;
    std::size_t line_no = 0;
    bool open = false;
    std::string raw;

    auto close = [&] {
        if (!open) return;
        finish_block(block, ++ordinal, out);
        block = Block{};
        open = false;
    };

    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = raw;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (trim(line).empty()) {
            close();
            continue;
        }
        if (!open) {
            open = true;
            block.first_line = line_no;
        }
        if (line.front() == '#') {
            if (auto v = comment_value(line, "sent_id")) block.id = *v;
            if (auto v = comment_value(line, "label")) block.label = *v;
            continue;
        }
        if (block.error) continue;
        const auto cols = split_tabs(line);
        if (cols.size() != 10) {
            block.error = ParseIssue{line_no, {}, "expected 10 tab-separated columns, found " +
                                                      std::to_string(cols.size())};
            continue;
        }
        if (cols[0].find_first_of("-.") != std::string_view::npos) continue;
        const auto index = parse_index(cols[0]);
        if (!index || *index == 0) {
            block.error = ParseIssue{line_no, {}, "invalid ID '" + std::string(cols[0]) + "'"};
            continue;
        }
        Token t;
        t.index = *index;
        t.form = std::string(cols[1]);
        if (t.form.empty()) {
            block.error = ParseIssue{line_no, {}, "empty FORM"};
            continue;
        }
        if (cols[6] == "_") {
            block.any_missing_head = true;
        } else {
            const auto head = parse_index(cols[6]);
            if (!head) {
                block.error =
                    ParseIssue{line_no, {}, "non-integer HEAD '" + std::string(cols[6]) + "'"};
                continue;
            }
            t.head = *head;
            block.any_head = true;
            t.deprel = normalize_deprel(cols[7]);
            if (t.deprel.empty()) {
                block.error = ParseIssue{line_no, {}, "empty DEPREL"};
                continue;
            }
        }
        block.tokens.push_back(std::move(t));
    }
    close();
    return out;
}

std::string serialize_conllu(std::span<const Sentence> sentences) {
    std::ostringstream os;
    for (const Sentence& s : sentences) {
        os << "# sent_id = " << s.id << '\n';
        if (s.label) os << "# label = " << *s.label << '\n';
        for (const Token& t : s.tokens) {
            os << t.index << '\t' << t.form << "\t_\t_\t_\t_\t";
            if (t.head) os << *t.head; else os << '_';
            os << '\t' << (t.deprel.empty() ? "_" : t.deprel) << "\t_\t_\n";
        }
        os << '\n';
    }
    return os.str();
}

ParseResult parse_plain_text(std::istream& in) {
    ParseResult out;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = trim(raw);
        if (line.empty()) continue;
        Sentence s;
        s.id = std::to_string(out.sentences.size() + out.errors.size() + 1);
        if (const auto tab = line.find('\t'); tab != std::string_view::npos) {
            s.label = std::string(trim(line.substr(0, tab)));
            line = trim(line.substr(tab + 1));
        }
        std::istringstream words{std::string(line)};
        std::string w;
        while (words >> w) {
            Token t;
            t.form = w;
            t.index = s.tokens.size() + 1;
            s.tokens.push_back(std::move(t));
        }
        if (s.tokens.empty()) {
            out.errors.push_back(ParseIssue{line_no, s.id, "sentence has no tokens"});
            continue;
        }
        out.sentences.push_back(std::move(s));
    }
    return out;
}

ParseResult read_corpus_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    const auto ext = path.extension().string();
    if (ext == ".conllu" || ext == ".conll") return parse_conllu(in);
    return parse_plain_text(in);
}

std::size_t attach_labels(std::vector<Sentence>& sentences, std::istream& tsv) {
    std::map<std::string, std::string> labels;
    std::string raw;
    while (std::getline(tsv, raw)) {
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos) continue;
        labels[std::string(trim(line.substr(0, tab)))] = std::string(trim(line.substr(tab + 1)));
    }
    std::size_t applied = 0;
    for (Sentence& s : sentences) {
        if (auto it = labels.find(s.id); it != labels.end()) {
            s.label = it->second;
            ++applied;
        }
    }
    return applied;
}

Sentence truncate(const Sentence& s, std::size_t max_len) {
    if (s.length() <= max_len) return s;
    Sentence out = s;
    out.tokens.resize(max_len);
    for (Token& t : out.tokens) {
        if (t.head && *t.head > max_len) t.head.reset();
    }
    return out;
}

Vocabulary Vocabulary::build(std::span<const Sentence> sentences) {
    if (sentences.empty()) throw std::invalid_argument("build_vocab: empty corpus");
    Vocabulary v;
    v.total_docs_ = sentences.size();
    for (const Sentence& s : sentences) {
        std::set<std::string_view> seen;
        for (const Token& t : s.tokens) seen.insert(t.form);
        for (auto form : seen) ++v.df_[std::string(form)];
    }
    v.index();
    return v;
}

Vocabulary Vocabulary::from_counts(std::map<std::string, std::size_t> df, std::size_t total_docs) {
    for (const auto& [form, count] : df) {
        if (count == 0 || count > total_docs) {
            throw std::invalid_argument("vocabulary: df of '" + form + "' outside [1, total_docs]");
        }
    }
    Vocabulary v;
    v.total_docs_ = total_docs;
    v.df_ = std::move(df);
    v.index();
    return v;
}

void Vocabulary::index() {
    forms_.clear();
    ids_.clear();
    for (const auto& [form, count] : df_) {
        ids_.emplace(form, forms_.size() + 2);
        forms_.push_back(form);
    }
}

std::size_t Vocabulary::df(const std::string& form) const {
    auto it = df_.find(form);
    return it == df_.end() ? 0 : it->second;
}

double Vocabulary::idf(const std::string& form) const {
    const std::size_t d = std::max<std::size_t>(df(form), 1);
    return std::log(static_cast<double>(total_docs_) / static_cast<double>(d));
}

std::size_t Vocabulary::id(const std::string& form) const {
    auto it = ids_.find(form);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::form(std::size_t id) const {
    static const std::string pad = "<pad>", unk = "<unk>";
    if (id == kPad) return pad;
    if (id == kUnk) return unk;
    return forms_.at(id - 2);
}

std::uint32_t Vocabulary::hash() const {
    std::ostringstream os;
    os << total_docs_ << '\n';
    for (const auto& [form, count] : df_) os << form << '\t' << count << '\n';
    const std::string s = os.str();
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

std::vector<std::size_t> rare_token_indices(const Sentence& s, const Vocabulary& v) {
    const std::size_t n = s.length();
    if (n == 0) return {};
    const std::size_t k = std::max<std::size_t>(1, (n + 9) / 10);
    std::vector<double> idf(n);
    for (std::size_t i = 0; i < n; ++i) idf[i] = v.idf(s.tokens[i].form);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return idf[a] > idf[b]; });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

LabelIndex::LabelIndex(std::vector<std::string> names) : names_(std::move(names)) {
    std::sort(names_.begin(), names_.end());
    names_.erase(std::unique(names_.begin(), names_.end()), names_.end());
}

LabelIndex LabelIndex::from_sentences(std::span<const Sentence> sentences) {
    std::vector<std::string> names;
    for (const Sentence& s : sentences)
        if (s.label) names.push_back(*s.label);
    return LabelIndex(std::move(names));
}

std::optional<std::size_t> LabelIndex::find(const std::string& name) const {
    auto it = std::lower_bound(names_.begin(), names_.end(), name);
    if (it == names_.end() || *it != name) return std::nullopt;
    return static_cast<std::size_t>(it - names_.begin());
}

std::size_t LabelIndex::at(const std::string& name) const {
    if (auto id = find(name)) return *id;
    throw std::out_of_range("unknown label '" + name + "'");
}

Dataset load_dataset(const std::filesystem::path& dir, std::vector<ParseIssue>* issues) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
    Dataset ds;
    ds.name = fs::absolute(dir).lexically_normal().filename().string();
    if (ds.name.empty()) ds.name = fs::absolute(dir).lexically_normal().parent_path().filename().string();

    auto load_split = [&](const std::string& split) {
        for (const char* ext : {".conllu", ".conll", ".txt"}) {
            const fs::path file = dir / (split + ext);
            if (!fs::exists(file)) continue;
            ParseResult r = read_corpus_file(file);
            const fs::path sidecar = dir / (split + ".labels.tsv");
            if (fs::exists(sidecar)) {
                std::ifstream tsv(sidecar);
                attach_labels(r.sentences, tsv);
            }
            if (issues) {
                for (auto& e : r.errors) {
                    e.message = file.filename().string() + ": " + e.message;
                    issues->push_back(std::move(e));
                }
            }
            return std::move(r.sentences);
        }
        throw std::runtime_error("dataset " + dir.string() + " has no " + split + " split");
    };
    ds.train = load_split("train");
    ds.dev = load_split("dev");
    ds.test = load_split("test");
    return ds;
}

}  // namespace roleattn
