#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace roleattn {

struct Token {
    std::string form;
    std::size_t index = 0;              // 1-based position
    std::optional<std::size_t> head;    // 0 = root; empty when unparsed or cut by truncation
    std::string deprel;                 // lowercased, subtype stripped
};

struct Sentence {
    std::string id;
    std::vector<Token> tokens;
    std::optional<std::string> label;
    bool parsed = false;

    std::size_t length() const { return tokens.size(); }
};

struct ParseIssue {
    std::size_t line = 0;
    std::string sentence_id;
    std::string message;
};

struct ParseResult {
    std::vector<Sentence> sentences;
    std::vector<ParseIssue> errors;
};

// Lowercases a dependency label and drops any ':'-subtype ("nsubj:pass" -> "nsubj").
std::string normalize_deprel(std::string_view deprel);

// Reads CoNLL-U. Multiword-token ("1-2") and empty-node ("1.1") lines are
// skipped. '# sent_id = X' and '# label = X' comments are honored. A
// malformed sentence is reported in ParseResult::errors with the offending
// line number and left out of the output.
ParseResult parse_conllu(std::istream& in);

// Writes ID, FORM, HEAD and DEPREL back out; remaining columns are '_'.
std::string serialize_conllu(std::span<const Sentence> sentences);

// One sentence per non-empty line, whitespace-tokenized, no parse. An
// optional "label<TAB>" prefix carries the class label.
ParseResult parse_plain_text(std::istream& in);

// Reads a file as CoNLL-U (.conllu/.conll) or plain text (anything else).
// Throws std::runtime_error when the file cannot be opened.
ParseResult read_corpus_file(const std::filesystem::path& path);

// Applies a "sentence-id<TAB>label" sidecar. Returns the number of
// sentences that received a label.
std::size_t attach_labels(std::vector<Sentence>& sentences, std::istream& tsv);

// Cuts a sentence to at most max_len tokens. Heads pointing past the cut
// are cleared, so the corresponding edges disappear from the masks.
Sentence truncate(const Sentence& s, std::size_t max_len);

// Token -> document frequency table, one document per sentence.
class Vocabulary {
public:
    static constexpr std::size_t kPad = 0;
    static constexpr std::size_t kUnk = 1;

    Vocabulary() = default;

    // Throws std::invalid_argument on an empty corpus.
    static Vocabulary build(std::span<const Sentence> sentences);
    static Vocabulary from_counts(std::map<std::string, std::size_t> df, std::size_t total_docs);

    std::size_t total_docs() const { return total_docs_; }
    // 0 for forms that were never seen.
    std::size_t df(const std::string& form) const;
    // ln(total_docs / df); unseen forms are treated as df = 1.
    double idf(const std::string& form) const;
    std::size_t id(const std::string& form) const;
    const std::string& form(std::size_t id) const;
    // Embedding rows, including PAD and UNK.
    std::size_t size() const { return forms_.size() + 2; }
    const std::map<std::string, std::size_t>& counts() const { return df_; }

    // CRC-32 over the canonical (form, df, total_docs) listing.
    std::uint32_t hash() const;

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
        return a.total_docs_ == b.total_docs_ && a.df_ == b.df_;
    }

private:
    void index();

    std::size_t total_docs_ = 0;
    std::map<std::string, std::size_t> df_;
    std::vector<std::string> forms_;
    std::unordered_map<std::string, std::size_t> ids_;
};

// The max(1, ceil(n/10)) positions (0-based) with the highest IDF, ties
// broken by earlier position. Returned in ascending position order.
std::vector<std::size_t> rare_token_indices(const Sentence& s, const Vocabulary& v);

// Sorted class names; a label's class id is its index.
class LabelIndex {
public:
    LabelIndex() = default;
    explicit LabelIndex(std::vector<std::string> names);
    static LabelIndex from_sentences(std::span<const Sentence> sentences);

    std::optional<std::size_t> find(const std::string& name) const;
    std::size_t at(const std::string& name) const;
    const std::string& name(std::size_t id) const { return names_.at(id); }
    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }

private:
    std::vector<std::string> names_;
};

struct Dataset {
    std::string name;
    std::vector<Sentence> train;
    std::vector<Sentence> dev;
    std::vector<Sentence> test;
};

// Loads train/dev/test files (.conllu or .txt) from a directory. Label
// sidecars named <split>.labels.tsv are applied when present. Parse issues
// are appended to `issues` when given.
Dataset load_dataset(const std::filesystem::path& dir, std::vector<ParseIssue>* issues = nullptr);

}  // namespace roleattn
