#include "calrecall/embeddings.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "calrecall/error.hpp"
#include "calrecall/text_io.hpp"

namespace calrecall {

namespace {

constexpr std::array<char, 4> kMagic = {'E', 'M', 'B', '1'};

void put_u16(std::ostream& out, std::uint16_t v)
{
    const char bytes[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    out.write(bytes, 2);
}

void put_u32(std::ostream& out, std::uint32_t v)
{
    char bytes[4];
    for (int i = 0; i < 4; ++i) {
        bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    }
    out.write(bytes, 4);
}

std::uint32_t get_u32(const unsigned char* p)
{
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

EmbeddingStore load_binary(const std::filesystem::path& path, std::size_t dim)
{
    const std::string bytes = read_file(path);
    const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t size = bytes.size();
    const std::string source = path.string();
    if (size < 12 || std::memcmp(data, kMagic.data(), 4) != 0) {
        throw ParseError(source, 0, "missing EMB1 header");
    }
    const std::uint32_t file_dim = get_u32(data + 4);
    const std::uint32_t count = get_u32(data + 8);
    if (dim != 0 && file_dim != dim) {
        throw ParseError(source, 0, "header dim " + std::to_string(file_dim) + " but expected " + std::to_string(dim));
    }
    EmbeddingStore store(file_dim);
    std::size_t pos = 12;
    for (std::uint32_t r = 0; r < count; ++r) {
        // records are numbered from 1 in errors, like lines
        const std::size_t record = r + 1;
        if (pos + 2 > size) {
            throw ParseError(source, record, "truncated record header");
        }
        const std::size_t id_len = static_cast<std::size_t>(data[pos]) | (static_cast<std::size_t>(data[pos + 1]) << 8);
        pos += 2;
        if (pos + id_len + 4 * static_cast<std::size_t>(file_dim) > size) {
            throw ParseError(source, record, "truncated record");
        }
        std::string id(bytes.data() + pos, id_len);
        pos += id_len;
        DenseVector values(file_dim);
        for (std::uint32_t k = 0; k < file_dim; ++k) {
            values[k] = std::bit_cast<float>(get_u32(data + pos));
            pos += 4;
        }
        try {
            store.insert(std::move(id), std::move(values));
        } catch (const std::invalid_argument& e) {
            throw ParseError(source, record, e.what());
        }
    }
    if (pos != size) {
        throw ParseError(source, count, "trailing bytes after last record");
    }
    return store;
}

EmbeddingStore load_tsv(const std::filesystem::path& path, std::size_t dim)
{
    EmbeddingStore store(dim);
    bool sized = dim != 0;
    const std::string source = path.string();
    for_each_line(path, [&](std::string_view line, std::size_t number) {
        if (line.empty()) {
            return;
        }
        auto tab = line.find('\t');
        if (tab == std::string_view::npos || tab == 0) {
            throw ParseError(source, number, "expected id<TAB>v1,v2,...");
        }
        auto fields = split(line.substr(tab + 1), ',');
        if (!sized) {
            store = EmbeddingStore(fields.size());
            sized = true;
        }
        if (fields.size() != store.dim()) {
            throw ParseError(source, number, "arity " + std::to_string(fields.size()) + " but dim is " +
                                                 std::to_string(store.dim()));
        }
        DenseVector values;
        values.reserve(fields.size());
        for (auto f : fields) {
            auto v = parse_double(f);
            if (!v) {
                throw ParseError(source, number, "bad value '" + std::string(f) + "'");
            }
            values.push_back(static_cast<float>(*v));
        }
        try {
            store.insert(std::string(line.substr(0, tab)), std::move(values));
        } catch (const std::invalid_argument& e) {
            throw ParseError(source, number, e.what());
        }
    });
    return store;
}

}  // namespace

void EmbeddingStore::insert(std::string id, DenseVector values)
{
    if (values.size() != dim_) {
        throw std::invalid_argument("vector for '" + id + "' has length " + std::to_string(values.size()) +
                                    ", expected " + std::to_string(dim_));
    }
    for (float v : values) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument("non-finite value in vector for '" + id + "'");
        }
    }
    auto [it, inserted] = index_.emplace(id, ids_.size());
    if (!inserted) {
        throw std::invalid_argument("duplicate embedding id '" + id + "'");
    }
    ids_.push_back(std::move(id));
    vectors_.push_back(std::move(values));
}

const DenseVector* EmbeddingStore::find(std::string_view id) const
{
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &vectors_[it->second];
}

EmbeddingFormat detect_embedding_format(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::array<char, 4> head{};
    in.read(head.data(), head.size());
    return (in.gcount() == 4 && head == kMagic) ? EmbeddingFormat::binary : EmbeddingFormat::tsv;
}

EmbeddingStore load_embeddings(const std::filesystem::path& path, std::size_t dim)
{
    if (detect_embedding_format(path) == EmbeddingFormat::binary) {
        return load_binary(path, dim);
    }
    return load_tsv(path, dim);
}

void write_embeddings(const EmbeddingStore& store, const std::filesystem::path& path, EmbeddingFormat format)
{
    auto out = open_for_write(path);
    if (format == EmbeddingFormat::tsv) {
        for (std::size_t i = 0; i < store.size(); ++i) {
            out << store.ids()[i] << '\t';
            const auto& v = store.at(i);
            for (std::size_t k = 0; k < v.size(); ++k) {
                if (k > 0) {
                    out << ',';
                }
                out << format_double(static_cast<double>(v[k]));
            }
            out << '\n';
        }
        return;
    }
    out.write(kMagic.data(), kMagic.size());
    put_u32(out, static_cast<std::uint32_t>(store.dim()));
    put_u32(out, static_cast<std::uint32_t>(store.size()));
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& id = store.ids()[i];
        if (id.size() > 0xffff) {
            throw std::invalid_argument("id too long for binary format: " + id.substr(0, 32) + "...");
        }
        put_u16(out, static_cast<std::uint16_t>(id.size()));
        out.write(id.data(), static_cast<std::streamsize>(id.size()));
        for (float v : store.at(i)) {
            put_u32(out, std::bit_cast<std::uint32_t>(v));
        }
    }
}

Fusion parse_fusion(std::string_view name)
{
    if (name == "e1") {
        return Fusion::e1_sparse_only;
    }
    if (name == "e2") {
        return Fusion::e2_dense_only;
    }
    if (name == "e3") {
        return Fusion::e3_concat;
    }
    if (name == "e4") {
        return Fusion::e4_dual;
    }
    throw ConfigError("fusion", "expected e1, e2, e3 or e4, got '" + std::string(name) + "'");
}

std::string_view to_string(Fusion f)
{
    switch (f) {
        case Fusion::e1_sparse_only:
            return "e1";
        case Fusion::e2_dense_only:
            return "e2";
        case Fusion::e3_concat:
            return "e3";
        case Fusion::e4_dual:
            return "e4";
    }
    return "?";
}

FeatureVector fuse(const SparseVector& sparse, const DenseVector* dense, Fusion strategy, std::size_t vocab_size,
                   std::string_view id, float dense_scale)
{
    FeatureVector out;
    if (strategy == Fusion::e1_sparse_only) {
        out.sparse = sparse;
        return out;
    }
    if (dense == nullptr) {
        throw std::invalid_argument("no dense vector for '" + std::string(id) + "' under " +
                                    std::string(to_string(strategy)));
    }
    out.dense = *dense;
    if (dense_scale != 1.0F) {
        for (float& v : out.dense) {
            v *= dense_scale;
        }
    }
    if (strategy != Fusion::e2_dense_only) {
        out.sparse = sparse;
        out.dense_offset = static_cast<std::uint32_t>(vocab_size);
    }
    return out;
}

FusedFeatures::FusedFeatures(const FeatureMatrix& sparse, const Corpus& corpus, const EmbeddingStore* store,
                             Fusion strategy, std::size_t vocab_size, float dense_scale)
    : sparse_(&sparse), strategy_(strategy), sparse_dim_(vocab_size)
{
    if (!requires_dense(strategy)) {
        return;
    }
    if (store == nullptr || store->empty()) {
        throw std::invalid_argument(std::string(to_string(strategy)) + " requires an embedding store");
    }
    dense_dim_ = store->dim();
    dense_.reserve(corpus.size() * dense_dim_);
    for (const auto& doc : corpus.docs()) {
        const DenseVector* v = store->find(doc.id);
        if (v == nullptr) {
            throw std::invalid_argument("no embedding for document '" + doc.id + "'");
        }
        for (float x : *v) {
            dense_.push_back(x * dense_scale);
        }
    }
}

std::size_t FusedFeatures::dimension() const
{
    switch (strategy_) {
        case Fusion::e1_sparse_only:
            return sparse_dim_;
        case Fusion::e2_dense_only:
            return dense_dim_;
        default:
            return sparse_dim_ + dense_dim_;
    }
}

FeatureRef FusedFeatures::row(DocIndex i) const
{
    switch (strategy_) {
        case Fusion::e1_sparse_only:
            return {sparse_->row(i), {}, 0};
        case Fusion::e2_dense_only:
            return {{}, std::span(dense_).subspan(std::size_t{i} * dense_dim_, dense_dim_), 0};
        default:
            return {sparse_->row(i), std::span(dense_).subspan(std::size_t{i} * dense_dim_, dense_dim_),
                    static_cast<std::uint32_t>(sparse_dim_)};
    }
}

}  // namespace calrecall
