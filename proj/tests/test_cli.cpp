#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "roleattn/corpus.hpp"
#include "roleattn/masks.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = ROLEATTN_FIXTURES;

struct Result {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// Each test gets its own working directory so stray writes are visible.
struct Workspace {
    fs::path dir;
    explicit Workspace(const std::string& name) : dir(fs::temp_directory_path() / ("roleattn_cli_" + name)) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Workspace() { fs::remove_all(dir); }

    Result run(const std::string& tool, const std::string& args) const {
        const std::string cmd = "cd '" + dir.string() + "' && '" + tool + "' " + args + " > stdout.txt 2> stderr.txt";
        const int status = std::system(cmd.c_str());
        Result r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(dir / "stdout.txt");
        r.err = slurp(dir / "stderr.txt");
        fs::remove(dir / "stdout.txt");
        fs::remove(dir / "stderr.txt");
        return r;
    }
    Result cli(const std::string& args) const { return run(ROLEATTN_CLI, args); }
    Result synth(const std::string& args) const { return run(ROLEATTN_SYNTH, args); }

    std::vector<std::string> entries() const {
        std::vector<std::string> out;
        for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path().filename().string());
        std::sort(out.begin(), out.end());
        return out;
    }
};

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

const std::string kSmallTrain = "--set epochs=2 --set max_len=8 --set d_model=12 --set d_ff=8";

}  // namespace

TEST_CASE("masks: relpos dump is tridiagonal and reproducible") {
    Workspace w("masks");
    const std::string args = "masks --data '" + (kFixtures / "twenty.conllu").string() + "' --roles relpos --out ";
    Result r = w.cli(args + "a");
    REQUIRE(r.code == 0);
    CHECK(w.cli(args + "b").code == 0);
    const std::string dump = slurp(w.dir / "a" / "masks.tsv");
    CHECK(dump == slurp(w.dir / "b" / "masks.tsv"));
    CHECK(w.entries() == std::vector<std::string>{"a", "b"});

    std::istringstream is(dump);
    auto records = roleattn::read_mask_records(is);
    REQUIRE(records.size() == 20);
    for (const auto& rec : records) {
        auto z = rec.mask.zeros();
        CHECK(oracle::Coords(z.begin(), z.end()) == oracle::tridiagonal(rec.mask.n()));
        CHECK(rec.mask.role == roleattn::Role::RelPos);
    }
}

TEST_CASE("masks: every role, cross-checked against the library") {
    Workspace w("masks_all");
    const fs::path input = kFixtures / "twenty.conllu";
    REQUIRE(w.cli("masks --data '" + input.string() + "' --out d").code == 0);
    std::istringstream is(slurp(w.dir / "d" / "masks.tsv"));
    auto records = roleattn::read_mask_records(is);
    CHECK(records.size() == 100);
    auto docs = roleattn::read_corpus_file(input).sentences;
    CHECK(records[4].sentence_id == "s1");
    CHECK(records[5].sentence_id == "s2");
    auto z = records[0].mask.zeros();
    CHECK(oracle::Coords(z.begin(), z.end()) == oracle::rare_words(docs[0], docs));
}

TEST_CASE("masks: plain text with parse-based roles warns and falls back") {
    Workspace w("plain");
    std::ofstream(w.dir / "in.txt") << "a b c\n";
    Result r = w.cli("masks --data in.txt --roles depsyn --out d");
    CHECK(r.code == 0);
    CHECK(r.err.find("warning") != std::string::npos);
    CHECK(lines(slurp(w.dir / "d" / "masks.tsv")).at(1) == "1\tdepsyn\t3\t1,1 2,2 3,3");
    Result quiet = w.cli("masks --data in.txt --roles relpos --out e");
    CHECK(quiet.err.empty());
}

TEST_CASE("masks: bad input and bad flags fail") {
    Workspace w("bad");
    CHECK(w.cli("masks --data missing.conllu --out d").code != 0);
    Result unknown = w.cli("masks --data x --out d --colour");
    CHECK(unknown.code != 0);
    CHECK(w.cli("masks --data x --out d --roles padding").code != 0);
    CHECK(w.cli("masks --data x --out d --roles syntax").code != 0);
    CHECK(w.cli("frobnicate").code != 0);
    CHECK(w.cli("").code != 0);
}

TEST_CASE("inspect: separators and relative position") {
    Workspace w("inspect");
    std::ofstream(w.dir / "hello.txt") << "Hello , world .\n";
    Result r = w.cli("inspect --data hello.txt --id 1 --roles seprat");
    REQUIRE(r.code == 0);
    auto g = lines(r.out);
    REQUIRE(g.size() >= 6);
    CHECK(g[0] == "role seprat (n=4)");
    CHECK(g[1] == "      Hello , world . ");
    for (std::size_t row = 2; row < 6; ++row) CHECK(g[row].substr(6) == "#     . #     . ");

    std::ofstream(w.dir / "three.txt") << "x y z\n";
    Result rel = w.cli("inspect --data three.txt --id 1 --roles relpos");
    auto t = lines(rel.out);
    CHECK(t[2] == "x . . # ");
    CHECK(t[3] == "y . . . ");
    CHECK(t[4] == "z # . . ");
    CHECK(w.cli("inspect --data three.txt --id 7").code != 0);
}

TEST_CASE("inspect: majrel grid matches the dump") {
    Workspace w("inspect_dump");
    const std::string input = "'" + (kFixtures / "twenty.conllu").string() + "'";
    REQUIRE(w.cli("masks --data " + input + " --roles majrel --out d").code == 0);
    Result r = w.cli("inspect --data " + input + " --id s2 --roles majrel");
    REQUIRE(r.code == 0);
    std::istringstream is(slurp(w.dir / "d" / "masks.tsv"));
    auto records = roleattn::read_mask_records(is);
    const auto& m = records.at(1).mask;
    REQUIRE(records.at(1).sentence_id == "s2");
    auto g = lines(r.out);
    const std::string header = g.at(1);
    const auto docs = roleattn::read_corpus_file(kFixtures / "twenty.conllu").sentences;
    const auto& s = docs.at(1);
    std::size_t row_w = 0;
    for (const auto& t : s.tokens) row_w = std::max(row_w, t.form.size());
    for (std::size_t i = 0; i < m.n(); ++i) {
        std::size_t col = row_w + 1;
        for (std::size_t j = 0; j < m.n(); ++j) {
            CHECK(g.at(2 + i).at(col) == (m.allowed(i, j) ? '.' : '#'));
            col += s.tokens[j].form.size() + 1;
        }
    }
    Result csv = w.cli("inspect --data " + input + " --id s2 --roles majrel --format csv");
    CHECK(csv.out == lines(slurp(w.dir / "d" / "masks.tsv")).at(2) + "\n");
}

TEST_CASE("train, eval and the vocabulary guard") {
    Workspace w("train");
    REQUIRE(w.synth("--out data --train 50 --dev 10 --test 10 --length 8 --vocab 12").code == 0);
    REQUIRE(w.synth("--out other --train 50 --dev 10 --test 10 --length 8 --vocab 12 --seed 8").code == 0);
    Result r = w.cli("train --data data --out run1 --seed 4 " + kSmallTrain);
    REQUIRE(r.code == 0);
    CHECK(fs::exists(w.dir / "run1" / "model.ckpt"));
    CHECK(lines(slurp(w.dir / "run1" / "history.csv")).size() == 1 + 2);
    const std::string manifest = slurp(w.dir / "run1" / "manifest.txt");
    CHECK(manifest.find("seed = 4\n") != std::string::npos);
    CHECK(manifest.find("d_model = 12\n") != std::string::npos);
    CHECK(manifest.find("dataset = data\n") != std::string::npos);

    REQUIRE(w.cli("train --data data --out run2 --seed 4 " + kSmallTrain).code == 0);
    for (const char* f : {"model.ckpt", "history.csv", "manifest.txt", "summary.csv"})
        CHECK(slurp(w.dir / "run1" / f) == slurp(w.dir / "run2" / f));

    Result ev = w.cli("eval --data data --checkpoint run1/model.ckpt --split dev --out ev --format csv");
    REQUIRE(ev.code == 0);
    CHECK(lines(ev.out).at(0) == "split,total,correct,accuracy,loss");
    CHECK(lines(slurp(w.dir / "ev" / "eval_dev.csv")).at(1).rfind("dev,10,", 0) == 0);
    CHECK(lines(slurp(w.dir / "ev" / "confusion_dev.csv")).size() == 5);

    Result mismatch = w.cli("eval --data other --checkpoint run1/model.ckpt --out ev2");
    CHECK(mismatch.code != 0);
    CHECK(mismatch.err.find("vocabulary") != std::string::npos);
    CHECK_FALSE(fs::exists(w.dir / "ev2"));

    Result bad = w.cli("train --data data --out run3 --set d_model=13");
    CHECK(bad.code != 0);
    CHECK_FALSE(fs::exists(w.dir / "run3"));
    CHECK(w.cli("train --data data --out run3 --set nonsense=1").code != 0);
    CHECK(w.entries() == std::vector<std::string>{"data", "ev", "other", "run1", "run2"});
}

TEST_CASE("config file with flag overrides") {
    Workspace w("config");
    REQUIRE(w.synth("--out data --train 30 --dev 10 --test 10 --length 6 --vocab 10").code == 0);
    std::ofstream(w.dir / "cfg.txt") << "epochs = 1\nd_model = 12\nd_ff = 8\nmax_len = 6\nseed = 5\n";
    REQUIRE(w.cli("train --data data --config cfg.txt --set epochs=2 --roles relpos,rarew --out r").code == 0);
    const std::string manifest = slurp(w.dir / "r" / "manifest.txt");
    CHECK(manifest.find("epochs = 2\n") != std::string::npos);
    CHECK(manifest.find("seed = 5\n") != std::string::npos);
    CHECK(manifest.find("guided_roles = relpos,rarew\n") != std::string::npos);
}

TEST_CASE("ablate: five role rows per seed, reproducible artifacts") {
    Workspace w("ablate");
    REQUIRE(w.synth("--out syn --train 40 --dev 10 --test 10 --length 6 --vocab 10").code == 0);
    const std::string args = "ablate --data syn --seeds 1,2 --jobs 2 " + kSmallTrain + " --out ";
    REQUIRE(w.cli(args + "a").code == 0);
    REQUIRE(w.cli(args + "b").code == 0);
    auto rows = lines(slurp(w.dir / "a" / "ablation.csv"));
    CHECK(rows.size() == 1 + 5 * 2);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(w.dir / "a")) {
        if (!e.is_regular_file()) continue;
        ++files;
        CHECK(slurp(e.path()) == slurp(w.dir / "b" / fs::relative(e.path(), w.dir / "a")));
    }
    CHECK(files == 4 + 2 * 7);
    CHECK(w.cli("ablate --data syn --roles relpos --ablate rarew --out c").code != 0);
}

TEST_CASE("grid writes a selection") {
    Workspace w("grid");
    REQUIRE(w.synth("--out syn --train 30 --dev 10 --test 10 --length 6 --vocab 10").code == 0);
    Result r = w.cli("grid --data syn --set epochs=1 --set max_len=6 --out g --format csv");
    REQUIRE(r.code == 0);
    auto sel = lines(slurp(w.dir / "g" / "selection.csv"));
    REQUIRE(sel.size() == 2);
    CHECK(sel[1].rfind("syn,2,1,", 0) == 0);
    CHECK(lines(slurp(w.dir / "g" / "results.csv")).size() == 2);
}
