#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gssm/errors.hpp"

namespace gssm {

// splitmix64 step; used to derive independent per-batch / per-stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    return splitmix64(splitmix64(base) ^ (stream + 0x632be59bd9b4e019ULL));
}

enum class TaskKind { induction_head, extended_induction_head, smnist, selective_copying };

inline std::string_view to_string(TaskKind k) {
    switch (k) {
        case TaskKind::induction_head: return "induction_head";
        case TaskKind::extended_induction_head: return "extended_induction_head";
        case TaskKind::smnist: return "smnist";
        case TaskKind::selective_copying: return "selective_copying";
    }
    return "unknown";
}

inline TaskKind task_kind_from_string(std::string_view s) {
    if (s == "induction_head") return TaskKind::induction_head;
    if (s == "extended_induction_head") return TaskKind::extended_induction_head;
    if (s == "smnist") return TaskKind::smnist;
    if (s == "selective_copying") return TaskKind::selective_copying;
    throw ConfigError("unknown task kind '" + std::string(s) + "'");
}

/// Integer token grid (batch x length) with one target class per sample.
struct SequenceBatch {
    std::size_t batch = 0;
    std::size_t length = 0;
    std::size_t vocab = 0;    // input token ids lie in [0, vocab)
    std::size_t classes = 0;  // targets lie in [0, classes)
    std::vector<int> tokens;
    std::vector<int> targets;
    TaskKind kind = TaskKind::induction_head;
    std::size_t trigger_length = 0;

    int token(std::size_t b, std::size_t t) const { return tokens[b * length + t]; }
    std::span<const int> row(std::size_t b) const { return {tokens.data() + b * length, length}; }

    void check_range() const {
        for (int v : tokens)
            if (v < 0 || static_cast<std::size_t>(v) >= vocab)
                throw ContractError("token id " + std::to_string(v) + " outside [0," +
                                    std::to_string(vocab) + ")");
        for (int v : targets)
            if (v < 0 || static_cast<std::size_t>(v) >= classes)
                throw ContractError("target id " + std::to_string(v) + " outside [0," +
                                    std::to_string(classes) + ")");
    }
};

/// Samples [begin, begin+count) of `src`.
inline SequenceBatch slice(const SequenceBatch& src, std::size_t begin, std::size_t count) {
    if (begin + count > src.batch) throw DimensionError("slice: range exceeds batch");
    SequenceBatch out = src;
    out.batch = count;
    out.tokens.assign(src.tokens.begin() + static_cast<std::ptrdiff_t>(begin * src.length),
                      src.tokens.begin() + static_cast<std::ptrdiff_t>((begin + count) * src.length));
    out.targets.assign(src.targets.begin() + static_cast<std::ptrdiff_t>(begin),
                       src.targets.begin() + static_cast<std::ptrdiff_t>(begin + count));
    return out;
}

inline SequenceBatch gather(const SequenceBatch& src, std::span<const std::size_t> indices) {
    SequenceBatch out = src;
    out.batch = indices.size();
    out.tokens.clear();
    out.targets.clear();
    out.tokens.reserve(indices.size() * src.length);
    for (auto i : indices) {
        auto r = src.row(i);
        out.tokens.insert(out.tokens.end(), r.begin(), r.end());
        out.targets.push_back(src.targets[i]);
    }
    return out;
}

/// Number of (possibly overlapping) occurrences of `pattern` in `seq`.
inline std::size_t count_occurrences(std::span<const int> seq, std::span<const int> pattern) {
    if (pattern.empty() || pattern.size() > seq.size()) return 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i + pattern.size() <= seq.size(); ++i)
        if (std::equal(pattern.begin(), pattern.end(), seq.begin() + static_cast<std::ptrdiff_t>(i)))
            ++n;
    return n;
}

/// Standard induction head. Token N-1 is the trigger; it appears at L/2-1
/// and L-1 only, the target is the token at L/2, filler is uniform on
/// [0, N-1).
/// With `random_middle` the first trigger sits at a uniform position in
/// [0, L-3] instead of L/2-1 (training variant; the target follows it).
inline SequenceBatch gen_induction_head(std::size_t N, std::size_t L, std::size_t batch,
                                        std::uint64_t seed, bool random_middle = false) {
    if (N < 3 || L < 4) throw ContractError("gen_induction_head: need N >= 3 and L >= 4");
    SequenceBatch out{batch, L, N, N, std::vector<int>(batch * L), std::vector<int>(batch),
                      TaskKind::induction_head, 1};
    std::mt19937_64 rng(derive_seed(seed, 0));
    std::uniform_int_distribution<int> filler(0, static_cast<int>(N) - 2);
    std::uniform_int_distribution<std::size_t> middle(0, L - 3);
    const int trigger = static_cast<int>(N) - 1;
    for (std::size_t b = 0; b < batch; ++b) {
        int* row = out.tokens.data() + b * L;
        for (std::size_t t = 0; t < L; ++t) row[t] = filler(rng);
        const std::size_t mid = random_middle ? middle(rng) : L / 2 - 1;
        row[mid] = trigger;
        row[L - 1] = trigger;
        out.targets[b] = row[mid + 1];
    }
    return out;
}

/// Fixed trigger pattern of the extended task: ids N-N_trig .. N-1.
inline std::vector<int> extended_trigger(std::size_t N, std::size_t n_trig) {
    std::vector<int> p(n_trig);
    for (std::size_t j = 0; j < n_trig; ++j) p[j] = static_cast<int>(N - n_trig + j);
    return p;
}

/// Extended induction head with an N_trig-token trigger ending at L/2-1 and
/// at L-1. Whole samples are redrawn until the trigger occurs exactly twice.
/// `random_middle` draws the first end position from [N_trig-1, L-N_trig-2].
inline SequenceBatch gen_extended_ih(std::size_t N, std::size_t L, std::size_t n_trig,
                                     std::size_t batch, std::uint64_t seed, bool random_middle = false) {
    if (n_trig == 0 || N < n_trig || N < 2) throw ContractError("gen_extended_ih: invalid N / N_trig");
    if (L < 2 * n_trig + 2) throw ContractError("gen_extended_ih: need L >= 2*N_trig + 2");
    SequenceBatch out{batch, L, N, N, std::vector<int>(batch * L), std::vector<int>(batch),
                      TaskKind::extended_induction_head, n_trig};
    std::mt19937_64 rng(derive_seed(seed, 1));
    std::uniform_int_distribution<int> filler(0, static_cast<int>(N) - 1);
    std::uniform_int_distribution<std::size_t> middle(n_trig - 1, L - n_trig - 2);
    const auto pattern = extended_trigger(N, n_trig);
    for (std::size_t b = 0; b < batch; ++b) {
        std::span<int> row(out.tokens.data() + b * L, L);
        bool ok = false;
        std::size_t mid = L / 2 - 1;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            for (auto& v : row) v = filler(rng);
            if (random_middle) mid = middle(rng);
            std::copy(pattern.begin(), pattern.end(), row.begin() + static_cast<std::ptrdiff_t>(mid + 1 - n_trig));
            std::copy(pattern.begin(), pattern.end(), row.end() - static_cast<std::ptrdiff_t>(n_trig));
            ok = count_occurrences(row, pattern) == 2;
        }
        if (!ok)
            throw GenerationError("gen_extended_ih: could not place trigger exactly twice after 1000 attempts");
        out.targets[b] = row[mid + 1];
    }
    return out;
}

/// Structural check shared by both recall tasks: `pattern` ends at L/2-1
/// and at L-1, and the target is the token at L/2.
inline bool recall_structure_ok(const SequenceBatch& s, std::span<const int> pattern) {
    const std::size_t L = s.length, k = pattern.size();
    for (std::size_t b = 0; b < s.batch; ++b) {
        auto row = s.row(b);
        if (!std::equal(pattern.begin(), pattern.end(), row.begin() + static_cast<std::ptrdiff_t>(L / 2 - k)))
            return false;
        if (!std::equal(pattern.begin(), pattern.end(), row.end() - static_cast<std::ptrdiff_t>(k)))
            return false;
        if (s.targets[b] != row[L / 2]) return false;
    }
    return true;
}

/// Fair blank(0)/data(1) label sequence for the selective-copying demo.
inline std::vector<int> gen_selective_copying(std::size_t length, std::uint64_t seed) {
    if (length == 0) throw ContractError("gen_selective_copying: length must be >= 1");
    std::mt19937_64 rng(derive_seed(seed, 2));
    std::vector<int> labels(length);
    for (auto& l : labels) l = static_cast<int>(rng() >> 63);
    return labels;
}

// ---------------------------------------------------------------------------
// IDX (MNIST) files: big-endian magic, dims, then raw unsigned bytes.

struct IdxImages {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> pixels;  // count * rows * cols, raster order
};

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    if (offset + 4 > bytes.size()) throw FormatError("IDX: truncated header");
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace detail

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

inline IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
    if (detail::read_be32(bytes, 0) != kIdxImagesMagic) throw FormatError("IDX images: bad magic");
    IdxImages img;
    img.count = detail::read_be32(bytes, 4);
    img.rows = detail::read_be32(bytes, 8);
    img.cols = detail::read_be32(bytes, 12);
    const std::size_t need = img.count * img.rows * img.cols;
    if (bytes.size() < 16 + need) throw FormatError("IDX images: truncated pixel data");
    img.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(need));
    return img;
}

inline std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
    if (detail::read_be32(bytes, 0) != kIdxLabelsMagic) throw FormatError("IDX labels: bad magic");
    const std::size_t n = detail::read_be32(bytes, 4);
    if (bytes.size() < 8 + n) throw FormatError("IDX labels: truncated label data");
    return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n)};
}

inline std::vector<std::uint8_t> serialize_idx_images(const IdxImages& img) {
    std::vector<std::uint8_t> out;
    out.reserve(16 + img.pixels.size());
    detail::write_be32(out, kIdxImagesMagic);
    detail::write_be32(out, static_cast<std::uint32_t>(img.count));
    detail::write_be32(out, static_cast<std::uint32_t>(img.rows));
    detail::write_be32(out, static_cast<std::uint32_t>(img.cols));
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

inline std::vector<std::uint8_t> serialize_idx_labels(std::span<const std::uint8_t> labels) {
    std::vector<std::uint8_t> out;
    out.reserve(8 + labels.size());
    detail::write_be32(out, kIdxLabelsMagic);
    detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.insert(out.end(), labels.begin(), labels.end());
    return out;
}

/// Pixel-sequence batch: one length rows*cols sequence per image over a
/// 256-token vocabulary, the digit label as target.
inline SequenceBatch mnist_sequences(const IdxImages& img, std::span<const std::uint8_t> labels) {
    if (img.count != labels.size()) throw FormatError("IDX: image and label counts differ");
    SequenceBatch out;
    out.batch = img.count;
    out.length = img.rows * img.cols;
    out.vocab = 256;
    out.classes = 10;
    out.kind = TaskKind::smnist;
    out.tokens.assign(img.pixels.begin(), img.pixels.end());
    for (auto l : labels) {
        if (l >= 10) throw FormatError("IDX labels: label outside [0,10)");
        out.targets.push_back(l);
    }
    return out;
}

inline SequenceBatch load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img = parse_idx_images(detail::read_file(images_path));
    const auto lab = parse_idx_labels(detail::read_file(labels_path));
    return mnist_sequences(img, lab);
}

/// One sequence per line: space-separated ids, then " -> target".
inline std::string format_batch_text(const SequenceBatch& s) {
    std::ostringstream os;
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (std::size_t t = 0; t < s.length; ++t) os << (t ? " " : "") << s.token(b, t);
        os << " -> " << s.targets[b] << '\n';
    }
    return os.str();
}

}  // namespace gssm
