#include "roleattn/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>

#include "roleattn/errors.hpp"

namespace roleattn {

namespace {

constexpr char kMagic[8] = {'R', 'G', 'A', 'C', 'K', 'P', 'T', '\0'};

std::uint32_t crc(std::string_view bytes) {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

class Writer {
public:
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s) {
        u64(s.size());
        buf_.append(s);
    }
    const std::string& bytes() const { return buf_; }

private:
    template <class T>
    void put(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::string buf_;
};

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}
    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
    std::string str() {
        const std::uint64_t n = u64();
        need(n);
        std::string s(bytes_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::uint64_t n) {
        if (n > bytes_.size() - pos_) throw CheckpointError("checkpoint is truncated");
    }
    template <class T>
    T get() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += sizeof(T);
        return v;
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
    Writer w;
    w.str(ckpt.config.to_text());
    w.u64(ckpt.vocab.total_docs());
    w.u64(ckpt.vocab.counts().size());
    for (const auto& [form, df] : ckpt.vocab.counts()) {
        w.str(form);
        w.u64(df);
    }
    w.u32(ckpt.vocab.hash());
    w.u64(ckpt.labels.size());
    for (const auto& name : ckpt.labels.names()) w.str(name);
    w.u64(ckpt.best_epoch);
    w.u64(ckpt.history.size());
    for (const EpochMetrics& m : ckpt.history) {
        w.u64(m.epoch);
        w.f64(m.train_loss);
        w.f64(m.train_acc);
        w.f64(m.dev_loss);
        w.f64(m.dev_acc);
    }
    w.u64(ckpt.params.count());
    for (const Parameter& p : ckpt.params) {
        w.str(p.name);
        w.u32(static_cast<std::uint32_t>(p.value.rank()));
        for (std::size_t d : p.value.shape()) w.u64(d);
        for (double v : p.value.data()) w.f64(v);
    }
    Writer header;
    header.u32(kCheckpointVersion);
    Writer trailer;
    trailer.u32(crc(w.bytes()));
    os.write(kMagic, sizeof kMagic);
    os << header.bytes() << w.bytes() << trailer.bytes();
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot write " + path.string());
    write_checkpoint(os, ckpt);
    if (!os) throw CheckpointError("write to " + path.string() + " failed");
}

Checkpoint read_checkpoint(std::istream& is) {
    const std::string all{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
    if (all.size() < sizeof kMagic + 8 || std::memcmp(all.data(), kMagic, sizeof kMagic) != 0) {
        throw CheckpointError("not a checkpoint file (bad magic)");
    }
    std::string_view rest(all);
    rest.remove_prefix(sizeof kMagic);
    Reader head(rest.substr(0, 4));
    const std::uint32_t version = head.u32();
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    rest.remove_prefix(4);
    const std::string_view body = rest.substr(0, rest.size() - 4);
    Reader tail(rest.substr(rest.size() - 4));
    if (tail.u32() != crc(body)) throw CheckpointError("checkpoint checksum mismatch");

    Reader r(body);
    Checkpoint ckpt;
    try {
        ckpt.config = ModelConfig::parse_text(r.str());
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint config: ") + e.what());
    }
    const std::uint64_t total_docs = r.u64();
    const std::uint64_t entries = r.u64();
    std::map<std::string, std::size_t> df;
    for (std::uint64_t i = 0; i < entries; ++i) {
        std::string form = r.str();
        df[std::move(form)] = r.u64();
    }
    try {
        ckpt.vocab = Vocabulary::from_counts(std::move(df), total_docs);
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(e.what());
    }
    if (r.u32() != ckpt.vocab.hash()) throw CheckpointError("vocabulary hash mismatch");
    std::vector<std::string> names(r.u64());
    for (auto& n : names) n = r.str();
    ckpt.labels = LabelIndex(std::move(names));
    ckpt.best_epoch = r.u64();
    ckpt.history.resize(r.u64());
    for (EpochMetrics& m : ckpt.history) {
        m.epoch = r.u64();
        m.train_loss = r.f64();
        m.train_acc = r.f64();
        m.dev_loss = r.f64();
        m.dev_acc = r.f64();
    }
    const std::uint64_t nparams = r.u64();
    for (std::uint64_t i = 0; i < nparams; ++i) {
        std::string name = r.str();
        std::vector<std::size_t> shape(r.u32());
        std::size_t count = 1;
        for (auto& d : shape) {
            d = r.u64();
            count *= d;
        }
        std::vector<double> data(count);
        for (double& v : data) v = r.f64();
        ckpt.params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    if (!r.done()) throw CheckpointError("trailing bytes after parameter blocks");
    return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open " + path.string());
    return read_checkpoint(is);
}

}  // namespace roleattn
