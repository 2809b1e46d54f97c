// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <meditool/error.hpp>
#include <meditool/knowledge_store.hpp>

#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace meditool;
using namespace meditool::knowledge;

namespace
{

ErrorCode code_of(const std::function<void()>& f)
{
    try
    {
        f();
    }
    catch (const Error& e)
    {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::InvalidArgument;
}

KnowledgeStore three_chunks()
{
    auto store = KnowledgeStore {};
    store.ingest_document("d1", "one", "alpha", SourceKind::Paper);
    store.ingest_document("d2", "two", "beta", SourceKind::Paper);
    store.ingest_document("d3", "three", "alpha beta", SourceKind::Guideline);
    store.seal();
    return store;
}

std::vector<std::string> token_texts(std::string_view text)
{
    auto out = std::vector<std::string> {};
    for (const auto& t: tokenize(text))
        out.push_back(t.text);
    return out;
}

} // namespace

TEST_CASE("tokenizer", "[knowledge_store]")
{
    auto const tokens = tokenize("QRISK3: 10-year risk, C=0.88!");
    CHECK(token_texts("QRISK3: 10-year risk, C=0.88!")
          == std::vector<std::string> { "qrisk3", "10", "year", "risk", "c", "0", "88" });
    CHECK(tokens[0].begin == 0);
    CHECK(tokens[0].end == 6);
    CHECK(tokenize("  ...  ").empty());
}

TEST_CASE("BM25 scores match a hand evaluation", "[knowledge_store]")
{
    // N = 3, avgdl = 4/3, df(alpha) = 2, idf = ln(1 + 1.5/2.5) = ln 1.6.
    // "alpha":      K = 1.2 (0.25 + 0.75 * 1 / (4/3)) = 0.975  -> ln1.6 * 2.2 / 1.975
    // "alpha beta": K = 1.2 (0.25 + 0.75 * 2 / (4/3)) = 1.65   -> ln1.6 * 2.2 / 2.65
    auto const store = three_chunks();
    auto const hits = store.search("alpha", 10);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].chunk.chunk_id == "d1#0");
    CHECK(hits[1].chunk.chunk_id == "d3#0");
    CHECK(std::abs(hits[0].score - 0.523548346501579) <= 1e-9);
    CHECK(std::abs(hits[1].score - 0.39019169220400696) <= 1e-9);
    CHECK(hits[0].rank == 1);
    CHECK(hits[1].rank == 2);
}

TEST_CASE("search edge cases", "[knowledge_store]")
{
    auto const store = three_chunks();
    CHECK(store.search("gamma delta", 10).empty());
    CHECK(store.search("ALPHA alpha", 10).size() == 2);
    CHECK(store.search("alpha", 1).size() == 1);

    auto const guideline = store.search("alpha", 10, SourceKind::Guideline);
    REQUIRE(guideline.size() == 1);
    CHECK(guideline[0].chunk.doc_id == "d3");

    CHECK(code_of([&] { (void)store.search("alpha", 0); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { (void)KnowledgeStore {}.search("alpha", 3); }) == ErrorCode::StoreEmpty);
}

TEST_CASE("ties break by document id then ordinal", "[knowledge_store]")
{
    auto store = KnowledgeStore {};
    store.ingest_document("b", "b", "same words", SourceKind::Paper);
    store.ingest_document("a", "a", "same words", SourceKind::Paper);
    auto const hits = store.search("same", 5);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].score == hits[1].score);
    CHECK(hits[0].chunk.doc_id == "a");
}

TEST_CASE("a unique phrase ranks its chunk first", "[knowledge_store]")
{
    auto store = KnowledgeStore {};
    load_corpus(store, support::bundled("corpus"));
    store.seal();
    auto const hits = store.search("atorvastatin", 3);
    REQUIRE_FALSE(hits.empty());
    CHECK(hits[0].chunk.doc_id == "cvd_guideline");
    CHECK(hits[0].chunk.text.find("atorvastatin") != std::string::npos);
    if (hits.size() > 1)
        CHECK(hits[0].score > hits[1].score);
}

TEST_CASE("ingestion rules", "[knowledge_store]")
{
    auto store = KnowledgeStore {};
    auto const text = std::string("A single short paragraph about risk.");
    auto const ids = store.ingest_document("doc", "Doc", text, SourceKind::Paper);
    REQUIRE(ids == std::vector<std::string> { "doc#0" });
    auto const& chunk = store.get_chunk("doc#0");
    CHECK(chunk.text == text);
    CHECK(chunk.char_span == std::pair<std::size_t, std::size_t> { 0, text.size() });
    CHECK(chunk.token_count == 6);

    CHECK(code_of([&] { store.ingest_document("doc", "Doc", "again", SourceKind::Paper); })
          == ErrorCode::DuplicateDocument);
    CHECK(code_of([&] { store.ingest_document("empty", "E", " -- ", SourceKind::Paper); }) == ErrorCode::EmptyDocument);
    CHECK(code_of([&] { (void)store.get_chunk("doc#9"); }) == ErrorCode::UnknownChunk);
    store.seal();
    CHECK(code_of([&] { store.ingest_document("late", "L", "text", SourceKind::Paper); }) == ErrorCode::StoreSealed);
}

TEST_CASE("chunks overlap by exactly the configured token count", "[knowledge_store]")
{
    auto rng = std::mt19937_64(8);
    for (int trial = 0; trial < 20; ++trial)
    {
        auto text = std::string {};
        auto const words = 50 + rng() % 400;
        for (std::size_t i = 0; i < words; ++i)
        {
            text += "w" + std::to_string(rng() % 50);
            text += (rng() % 25 == 0) ? "\n\n" : " ";
        }
        auto const config = StoreConfig { 40, 8, 1.2, 0.75 };
        auto store = KnowledgeStore(config);
        auto const ids = store.ingest_document("doc", "Doc", text, SourceKind::Paper);
        auto const& chunks = store.chunks();
        REQUIRE(chunks.size() == ids.size());
        CHECK(chunks.front().char_span.first == 0);
        CHECK(chunks.back().char_span.second == text.size());

        std::size_t covered = 0;
        for (std::size_t i = 0; i < chunks.size(); ++i)
        {
            auto const& c = chunks[i];
            CHECK(c.text == text.substr(c.char_span.first, c.char_span.second - c.char_span.first));
            CHECK(c.token_count <= config.max_chunk_tokens);
            CHECK(token_texts(c.text).size() == c.token_count);
            CHECK(c.ordinal == i);
            covered += c.token_count - (i == 0 ? 0 : config.overlap_tokens);
            if (i + 1 < chunks.size())
            {
                auto const here = token_texts(c.text);
                auto const next = token_texts(chunks[i + 1].text);
                CHECK(std::vector<std::string>(here.end() - 8, here.end())
                      == std::vector<std::string>(next.begin(), next.begin() + 8));
            }
        }
        CHECK(covered == tokenize(text).size());
    }
}

TEST_CASE("bundled corpus loads", "[knowledge_store]")
{
    auto store = KnowledgeStore {};
    load_corpus(store, support::bundled("corpus"));
    CHECK(store.document_count() == 3);
    CHECK(store.get_chunk("qrisk3_summary#0").source_kind == SourceKind::Paper);
    CHECK(store.get_chunk("cvd_guideline#0").source_kind == SourceKind::Guideline);
    CHECK(source_kind_from_string("guideline") == SourceKind::Guideline);
    CHECK_FALSE(source_kind_from_string("blog").has_value());
    CHECK(store.get_chunk("qrisk3_summary#0").text.starts_with("# QRISK3"));
    CHECK(store.search("spdx license identifier", 3).empty());
}

TEST_CASE("leading header comment is not corpus text", "[knowledge_store]")
{
    CHECK(strip_header_comment("<!-- x -->\n\nbody") == "body");
    CHECK(strip_header_comment("body <!-- x -->") == "body <!-- x -->");
    CHECK(strip_header_comment("<!-- open") == "<!-- open");
}
