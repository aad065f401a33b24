#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "calrecall/ingestion.hpp"
#include "calrecall/session.hpp"

namespace calrecall {

/// Everything a batch run or a review service needs. Loaded from an INI
/// file with [data], [features], [train], [session], [rerank], [run] and
/// [service] sections; relative paths resolve against the manifest's folder.
struct RunManifest {
    std::filesystem::path corpus;
    CorpusFormat corpus_format = CorpusFormat::tsv;
    std::filesystem::path topics;
    std::filesystem::path qrels;
    /// Document vectors; topic vectors are looked up here too unless
    /// query_embeddings is given.
    std::optional<std::filesystem::path> embeddings;
    std::optional<std::filesystem::path> query_embeddings;
    std::size_t embedding_dim = 0;
    std::optional<std::filesystem::path> cache_dir;

    SessionConfig session;

    std::filesystem::path out_dir = "out";
    unsigned jobs = 1;

    /// Judgments between model snapshots in the review service.
    std::size_t snapshot_every = 25;

    /// Config checks plus existence of every referenced file.
    void validate() const;
};

RunManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir = {});
RunManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const RunManifest& manifest, std::ostream& out);
void write_manifest(const RunManifest& manifest, const std::filesystem::path& path);

}  // namespace calrecall
