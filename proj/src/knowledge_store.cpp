// SPDX-License-Identifier: Apache-2.0
#include <meditool/error.hpp>
#include <meditool/knowledge_store.hpp>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace meditool::knowledge
{

std::string_view to_string(SourceKind kind) noexcept
{
    return kind == SourceKind::Paper ? "paper" : "guideline";
}

std::optional<SourceKind> source_kind_from_string(std::string_view text) noexcept
{
    if (text == "paper")
        return SourceKind::Paper;
    if (text == "guideline")
        return SourceKind::Guideline;
    return std::nullopt;
}

namespace
{

bool is_token_char(char c) noexcept
{
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

char lower(char c) noexcept
{
    return c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c;
}

// A blank line between two tokens marks a paragraph boundary.
bool paragraph_break(std::string_view text, std::size_t from, std::size_t to)
{
    int newlines = 0;
    for (auto i = from; i < to; ++i)
    {
        if (text[i] == '\n')
        {
            if (++newlines == 2)
                return true;
        }
        else if (text[i] != ' ' && text[i] != '\t' && text[i] != '\r')
            newlines = 0;
    }
    return false;
}

} // namespace

std::vector<Token> tokenize(std::string_view text)
{
    auto tokens = std::vector<Token> {};
    std::size_t i = 0;
    while (i < text.size())
    {
        if (!is_token_char(text[i]))
        {
            ++i;
            continue;
        }
        auto const begin = i;
        auto word = std::string {};
        while (i < text.size() && is_token_char(text[i]))
            word.push_back(lower(text[i++]));
        tokens.push_back({ std::move(word), begin, i });
    }
    return tokens;
}

KnowledgeStore::KnowledgeStore(StoreConfig config): _config(config)
{
    if (_config.max_chunk_tokens == 0 || _config.overlap_tokens >= _config.max_chunk_tokens)
        throw Error(ErrorCode::InvalidArgument, "chunk overlap must be smaller than the chunk size");
}

std::string strip_header_comment(std::string text)
{
    if (!text.starts_with("<!--"))
        return text;
    auto const close = text.find("-->");
    if (close == std::string::npos)
        return text;
    auto begin = close + 3;
    while (begin < text.size() && (text[begin] == '\n' || text[begin] == '\r'))
        ++begin;
    return text.substr(begin);
}

std::vector<std::string> KnowledgeStore::ingest_document(std::string doc_id, std::string title, std::string text,
                                                         SourceKind source_kind)
{
    if (_sealed)
        throw Error(ErrorCode::StoreSealed, "knowledge store is sealed; documents are ingested at startup only");
    if (doc_id.empty())
        throw Error(ErrorCode::InvalidArgument, "doc_id must not be empty");
    if (_documents.contains(doc_id))
        throw Error(ErrorCode::DuplicateDocument, fmt::format("document '{}' is already ingested", doc_id));
    auto const tokens = tokenize(text);
    if (tokens.empty())
        throw Error(ErrorCode::EmptyDocument, fmt::format("document '{}' contains no searchable text", doc_id));

    auto const n = tokens.size();
    auto const max = _config.max_chunk_tokens;
    auto const overlap = _config.overlap_tokens;

    // boundary[t]: a paragraph starts at token t
    auto boundary = std::vector<bool>(n + 1, false);
    boundary[n] = true;
    for (std::size_t t = 1; t < n; ++t)
        boundary[t] = paragraph_break(text, tokens[t - 1].end, tokens[t].begin);

    auto ids = std::vector<std::string> {};
    std::size_t start = 0;
    for (std::size_t ordinal = 0;; ++ordinal)
    {
        std::size_t end = 0;
        if (n - start <= max)
            end = n;
        else
        {
            end = start + max;
            while (end > start + overlap + 1 && !boundary[end])
                --end;
            if (!boundary[end])
                end = start + max;
        }

        auto const begin_char = start == 0 ? std::size_t { 0 } : tokens[start].begin;
        auto const end_char = end == n ? text.size() : tokens[end].begin;

        auto chunk = DocumentChunk {};
        chunk.chunk_id = fmt::format("{}#{}", doc_id, ordinal);
        chunk.doc_id = doc_id;
        chunk.title = title;
        chunk.source_kind = source_kind;
        chunk.text = text.substr(begin_char, end_char - begin_char);
        chunk.char_span = { begin_char, end_char };
        chunk.ordinal = ordinal;
        chunk.token_count = end - start;

        auto counts = std::map<std::string_view, std::size_t> {};
        for (auto t = start; t < end; ++t)
            ++counts[tokens[t].text];
        auto const index = _chunks.size();
        for (const auto& [term, tf]: counts)
        {
            auto it = _postings.find(term);
            if (it == _postings.end())
                it = _postings.emplace(std::string(term), std::vector<Posting> {}).first;
            it->second.push_back({ index, tf });
        }
        _totalTokens += chunk.token_count;
        _chunkIndex.emplace(chunk.chunk_id, index);
        ids.push_back(chunk.chunk_id);
        _chunks.push_back(std::move(chunk));

        if (end == n)
            break;
        start = end - overlap;
    }

    _documents.emplace(std::move(doc_id), std::move(text));
    return ids;
}

std::vector<ScoredChunk> KnowledgeStore::search(std::string_view query, std::size_t k,
                                                std::optional<SourceKind> filter) const
{
    if (_chunks.empty())
        throw Error(ErrorCode::StoreEmpty, "knowledge store has no documents");
    if (k == 0)
        throw Error(ErrorCode::InvalidArgument, "k must be at least 1");

    auto const n = static_cast<double>(_chunks.size());
    auto const avgdl = static_cast<double>(_totalTokens) / n;
    auto scores = std::vector<double>(_chunks.size(), 0.0);

    auto seen = std::set<std::string> {};
    for (const auto& token: tokenize(query))
    {
        if (!seen.insert(token.text).second)
            continue;
        auto const it = _postings.find(token.text);
        if (it == _postings.end())
            continue;
        auto const df = static_cast<double>(it->second.size());
        auto const idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        for (auto const& posting: it->second)
        {
            auto const tf = static_cast<double>(posting.tf);
            auto const dl = static_cast<double>(_chunks[posting.chunk].token_count);
            auto const norm = _config.k1 * (1.0 - _config.b + _config.b * dl / avgdl);
            scores[posting.chunk] += idf * tf * (_config.k1 + 1.0) / (tf + norm);
        }
    }

    auto candidates = std::vector<std::size_t> {};
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (scores[i] > 0.0 && (!filter || _chunks[i].source_kind == *filter))
            candidates.push_back(i);
    std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b])
            return scores[a] > scores[b];
        if (_chunks[a].doc_id != _chunks[b].doc_id)
            return _chunks[a].doc_id < _chunks[b].doc_id;
        return _chunks[a].ordinal < _chunks[b].ordinal;
    });
    if (candidates.size() > k)
        candidates.resize(k);

    auto hits = std::vector<ScoredChunk> {};
    for (std::size_t r = 0; r < candidates.size(); ++r)
        hits.push_back({ _chunks[candidates[r]], scores[candidates[r]], r + 1 });
    return hits;
}

const DocumentChunk& KnowledgeStore::get_chunk(std::string_view chunk_id) const
{
    auto const it = _chunkIndex.find(chunk_id);
    if (it == _chunkIndex.end())
        throw Error(ErrorCode::UnknownChunk, fmt::format("no chunk with id '{}'", chunk_id));
    return _chunks[it->second];
}

void load_corpus(KnowledgeStore& store, const std::filesystem::path& dir)
{
    auto const manifest_path = dir / "manifest.json";
    auto in = std::ifstream(manifest_path);
    if (!in)
        throw Error(ErrorCode::ConfigError, fmt::format("cannot open corpus manifest '{}'", manifest_path.string()));
    auto manifest = nlohmann::json {};
    try
    {
        manifest = nlohmann::json::parse(in);
    }
    catch (const nlohmann::json::exception& e)
    {
        throw Error(ErrorCode::ConfigError, "corpus manifest is not valid JSON", { e.what() });
    }
    if (!manifest.contains("documents") || !manifest["documents"].is_array())
        throw Error(ErrorCode::ConfigError, "corpus manifest needs a 'documents' array");

    for (const auto& entry: manifest["documents"])
    {
        auto const doc_id = entry.value("doc_id", std::string {});
        auto const kind = source_kind_from_string(entry.value("source_kind", std::string {}));
        if (!kind)
            throw Error(ErrorCode::ConfigError,
                        fmt::format("document '{}': source_kind must be 'paper' or 'guideline'", doc_id));
        auto const path = dir / entry.value("path", std::string {});
        auto file = std::ifstream(path);
        if (!file)
            throw Error(ErrorCode::ConfigError, fmt::format("cannot open corpus document '{}'", path.string()));
        auto buffer = std::stringstream {};
        buffer << file.rdbuf();
        store.ingest_document(doc_id, entry.value("title", doc_id), strip_header_comment(buffer.str()), *kind);
    }
}

} // namespace meditool::knowledge
