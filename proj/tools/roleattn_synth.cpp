// Writes the adjacency task as a dataset directory (train/dev/test .txt with
// a label prefix on every line).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "roleattn/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

void write_split(const fs::path& p, const std::vector<roleattn::Sentence>& split) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    for (const auto& s : split) {
        os << *s.label << '\t';
        for (std::size_t i = 0; i < s.tokens.size(); ++i) os << (i ? " " : "") << s.tokens[i].form;
        os << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generate the adjacency classification task"};
    roleattn::AdjacencyTaskOptions o;
    std::string out;
    app.add_option("--out", out, "Output directory")->required();
    app.add_option("--train", o.train, "Training sentences");
    app.add_option("--dev", o.dev, "Dev sentences");
    app.add_option("--test", o.test, "Test sentences");
    app.add_option("--vocab", o.vocab, "Vocabulary size (including the two markers)");
    app.add_option("--length", o.length, "Tokens per sentence");
    app.add_option("--seed", o.seed, "Generator seed");
    CLI11_PARSE(app, argc, argv);
    try {
        const roleattn::Dataset ds = roleattn::make_adjacency_task(o);
        fs::create_directories(out);
        write_split(fs::path(out) / "train.txt", ds.train);
        write_split(fs::path(out) / "dev.txt", ds.dev);
        write_split(fs::path(out) / "test.txt", ds.test);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
