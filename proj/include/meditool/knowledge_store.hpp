// SPDX-License-Identifier: Apache-2.0
#pragma once

// Passage store over approved documents with BM25 ranking.
//
// Tokens are maximal runs of ASCII letters and digits, lowercased; everything
// else separates tokens. No stemming, no stop words. Chunk budgets count these
// tokens.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace meditool::knowledge
{

enum class SourceKind
{
    Paper,
    Guideline,
};

std::string_view to_string(SourceKind kind) noexcept;
std::optional<SourceKind> source_kind_from_string(std::string_view text) noexcept;

struct Token
{
    std::string text;  // lowercased
    std::size_t begin; // byte offset in the source
    std::size_t end;
};

std::vector<Token> tokenize(std::string_view text);

// Drops a leading <!-- ... --> block (license header) and the line breaks after it.
std::string strip_header_comment(std::string text);

struct DocumentChunk
{
    std::string chunk_id; // "<doc_id>#<ordinal>"
    std::string doc_id;
    std::string title;
    SourceKind source_kind = SourceKind::Paper;
    std::string text;
    std::pair<std::size_t, std::size_t> char_span; // [begin, end) in the source text
    std::size_t ordinal = 0;
    std::size_t token_count = 0;
};

struct ScoredChunk
{
    DocumentChunk chunk;
    double score = 0.0;
    std::size_t rank = 0; // 1-based
};

struct StoreConfig
{
    std::size_t max_chunk_tokens = 300;
    std::size_t overlap_tokens = 50;
    double k1 = 1.2;
    double b = 0.75;
};

class KnowledgeStore
{
  public:
    explicit KnowledgeStore(StoreConfig config = {});

    /// Splits on paragraph boundaries where possible. Consecutive chunks share
    /// exactly `overlap_tokens` tokens. Throws DuplicateDocument, EmptyDocument
    /// (no tokens) or StoreSealed.
    std::vector<std::string> ingest_document(std::string doc_id, std::string title, std::string text,
                                             SourceKind source_kind);

    void seal() noexcept { _sealed = true; }
    [[nodiscard]] bool sealed() const noexcept { return _sealed; }

    /// Top-k by BM25, ties by (doc_id, ordinal); zero scores are dropped.
    /// Throws StoreEmpty when nothing has been ingested.
    [[nodiscard]] std::vector<ScoredChunk> search(std::string_view query, std::size_t k,
                                                  std::optional<SourceKind> filter = {}) const;

    /// Throws UnknownChunk.
    [[nodiscard]] const DocumentChunk& get_chunk(std::string_view chunk_id) const;

    [[nodiscard]] const std::vector<DocumentChunk>& chunks() const noexcept { return _chunks; }
    [[nodiscard]] std::size_t document_count() const noexcept { return _documents.size(); }
    [[nodiscard]] const StoreConfig& config() const noexcept { return _config; }

  private:
    struct Posting
    {
        std::size_t chunk;
        std::size_t tf;
    };

    StoreConfig _config;
    bool _sealed = false;
    std::map<std::string, std::string, std::less<>> _documents; // doc_id -> source text
    std::vector<DocumentChunk> _chunks;
    std::map<std::string, std::size_t, std::less<>> _chunkIndex;
    std::map<std::string, std::vector<Posting>, std::less<>> _postings;
    std::size_t _totalTokens = 0;
};

/// Reads `<dir>/manifest.json` ({"documents": [{doc_id, title, source_kind, path}]})
/// and ingests every listed file. Paths are relative to `dir`.
void load_corpus(KnowledgeStore& store, const std::filesystem::path& dir);

} // namespace meditool::knowledge
