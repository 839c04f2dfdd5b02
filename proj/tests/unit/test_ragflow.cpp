#include "mia/error.hpp"
#include "mia/ragflow.hpp"

#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <nlohmann/json.hpp>

#include <mutex>

using namespace mia;

namespace {

struct Toy {
    std::vector<Chunk> chunks;
    Mindscape ms;
    Collection index{"toy", 32};
    std::unique_ptr<Embedder> emb = make_mock_embedder(7, 32);
    std::vector<QaItem> qa = load_qa_jsonl(std::string(MIA_SOURCE_DIR) + "/data/toy/qa.jsonl");

    Toy() {
        auto docs = load_documents_jsonl(std::string(MIA_SOURCE_DIR) + "/data/toy/book.jsonl");
        chunks = chunk_document(docs.at(0), {120, 20});
        ms = build_mindscape(*make_mock_gateway(7, 2), docs[0].id, chunks);
        std::vector<std::string> texts;
        for (const auto& c : chunks) texts.push_back(c.text);
        auto vs = emb->embed_texts(texts);
        for (std::size_t i = 0; i < chunks.size(); ++i) index.insert(chunks[i].id(), vs[i], chunks[i].text);
    }

    RagContext ctx(LlmGateway& gw) const {
        RagContext c;
        c.embedder = emb.get();
        c.gateway = &gw;
        c.mindscape = &ms;
        c.index = &index;
        return c;
    }
};

// Gateway that records every prompt and answers with a fixed string.
struct Recording {
    std::mutex mu;
    std::vector<std::string> prompts;
    std::unique_ptr<LlmGateway> gw;

    explicit Recording(std::string reply) {
        auto t = std::make_unique<MockChatTransport>(1);
        t->set_responder([this, reply](const ChatRequest& req) -> std::optional<std::string> {
            std::lock_guard lock(mu);
            prompts.push_back(req.user);
            return reply;
        });
        GatewayOptions opt;
        opt.parallelism = 1;
        gw = std::make_unique<LlmGateway>(std::move(t), opt);
    }
};

std::vector<Chunk> store(const std::string& doc, std::size_t n) {
    std::vector<Chunk> out;
    for (std::size_t i = 0; i < n; ++i) {
        Chunk c;
        c.doc_id = doc;
        c.index = i;
        c.text = doc + " text " + std::to_string(i);
        out.push_back(c);
    }
    return out;
}

SilverRecord chunk_record(std::string qid, std::string doc, std::vector<std::string> silver) {
    SilverRecord r;
    r.qid = std::move(qid);
    r.query = "Where is the lamp?";
    r.answer = "the tower";
    r.task = EvidenceTask::chunk;
    r.doc_id = std::move(doc);
    r.silver_ids = std::move(silver);
    return r;
}

}  // namespace

TEST_CASE("narrative answers") {
    auto p = parse_answer(GenTask::narrativeqa, "  Answer: The old tower.\nBecause...");
    CHECK(p.parsed);
    CHECK(p.answer == "The old tower");
    p = parse_answer(GenTask::narrativeqa, "\"Margaret\"");
    CHECK(p.answer == "Margaret");
    p = parse_answer(GenTask::narrativeqa, "   ");
    CHECK_FALSE(p.parsed);
}

TEST_CASE("multiple choice letters") {
    CHECK(parse_answer(GenTask::infbench, "C").answer == "C");
    CHECK(parse_answer(GenTask::infbench, "The answer is (B).").answer == "B");
    CHECK(parse_answer(GenTask::infbench, "Answer: D").answer == "D");
    CHECK(parse_answer(GenTask::infbench, "A fisherman would pick C").answer == "C");
    const auto none = parse_answer(GenTask::infbench, "no idea");
    CHECK_FALSE(none.parsed);
    CHECK(none.answer == "no idea");
}

TEST_CASE("detective JSON answers") {
    auto p = parse_answer(GenTask::detective, "Sure: {\"reasoning\": \"the lamp\", \"answer\": \"B\"} done");
    CHECK(p.parsed);
    CHECK(p.answer == "B");
    CHECK(p.reasoning == "the lamp");
    p = parse_answer(GenTask::detective, "{\"reasoning\": \"unterminated, \"answer\": \"D\"");
    CHECK(p.parsed);
    CHECK(p.answer == "D");
    CHECK_FALSE(parse_answer(GenTask::detective, "{\"answer\": 3}").parsed);
}

TEST_CASE("claim verdicts") {
    auto p = parse_answer(GenTask::nocha, "<explanation>It fits.</explanation><answer> true </answer>");
    CHECK(p.parsed);
    CHECK(p.verdict == true);
    CHECK(p.answer == "TRUE");
    CHECK(p.reasoning == "It fits.");
    CHECK(parse_answer(GenTask::nocha, "<answer>FALSE</answer>").verdict == false);
    const auto bad = parse_answer(GenTask::nocha, "<answer>maybe</answer>");
    CHECK_FALSE(bad.parsed);
    CHECK_FALSE(bad.verdict.has_value());
}

TEST_CASE("generation prompt") {
    const auto p = assemble_gen_prompt("SUMMARY-X", {"alpha", "beta"}, "Who keeps the lamp?", GenTask::narrativeqa);
    CHECK(p.find("using a single phrase") != std::string::npos);
    CHECK(p.find("SUMMARY-X") != std::string::npos);
    CHECK(p.find("Who keeps the lamp?") != std::string::npos);
    CHECK(p.find("[Chunk 1]\nalpha") < p.find("[Chunk 2]\nbeta"));
    const auto mc = assemble_gen_prompt("s", {"x"}, "q", GenTask::infbench, "A. one\nB. two");
    CHECK(mc.find("B. two") != std::string::npos);
    CHECK(format_chunks({}) == "");
}

TEST_CASE("answering places chunks in rank order") {
    Toy toy;
    Recording rec("Margaret");
    auto ctx = toy.ctx(*rec.gw);
    const auto& item = toy.qa.at(0);
    const auto r = answer_query(ctx, item, 5);
    REQUIRE(r.retrieved_ids.size() == 5);
    CHECK(r.parsed.answer == "Margaret");
    REQUIRE(rec.prompts.size() == 1);
    const auto& prompt = rec.prompts[0];
    CHECK(prompt == r.prompt_used);
    CHECK(prompt.find(toy.ms.global_summary) != std::string::npos);
    std::size_t last = 0;
    for (std::size_t i = 0; i < r.retrieved_ids.size(); ++i) {
        const auto text = *toy.index.payload(r.retrieved_ids[i]);
        const auto at = prompt.find("[Chunk " + std::to_string(i + 1) + "]\n" + text);
        REQUIRE(at != std::string::npos);
        CHECK(at >= last);
        last = at;
    }
    // The ranking itself matches the index for the conditioned query.
    const auto cq = condition_query(*toy.emb, item.question, toy.ms, RetrievalMode::chunk, ctx.delta, ctx.tokens);
    const auto hits = toy.index.top_k(cq.q_tilde, 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(hits[i].id == r.retrieved_ids[i]);
}

TEST_CASE("context_k trims the prompt, not the retrieval list") {
    Toy toy;
    Recording rec("x");
    auto ctx = toy.ctx(*rec.gw);
    ctx.context_k = 2;
    const auto r = answer_query(ctx, toy.qa.at(0), 6);
    CHECK(r.retrieved_ids.size() == 6);
    CHECK(r.prompt_used.find("[Chunk 2]") != std::string::npos);
    CHECK(r.prompt_used.find("[Chunk 3]") == std::string::npos);
}

TEST_CASE("summary-only mode skips retrieval") {
    Toy toy;
    Recording rec("x");
    auto ctx = toy.ctx(*rec.gw);
    ctx.summary_only = true;
    ctx.embedder = nullptr;
    ctx.index = nullptr;
    const auto r = answer_query(ctx, toy.qa.at(0), 5);
    CHECK(r.retrieved_ids.empty());
    CHECK(r.prompt_used.find("[Chunk") == std::string::npos);
    CHECK(r.prompt_used.find(toy.ms.global_summary) != std::string::npos);
}

TEST_CASE("answer preconditions") {
    Toy toy;
    Recording rec("x");
    auto ctx = toy.ctx(*rec.gw);
    auto other = toy.qa.at(0);
    other.doc_id = "elsewhere";
    CHECK_THROWS_AS(answer_query(ctx, other, 5), Error);
    CHECK_THROWS_AS(answer_query(ctx, toy.qa.at(0), 0), Error);
}

TEST_CASE("transcripts are deterministic across parallelism") {
    Toy toy;
    auto gw1 = make_mock_gateway(7, 1);
    auto gw4 = make_mock_gateway(7, 4);
    const auto a = answer_all(toy.ctx(*gw1), toy.qa, 5);
    const auto b = answer_all(toy.ctx(*gw4), toy.qa, 5);
    REQUIRE(a.size() == toy.qa.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].qid == toy.qa[i].qid);
        CHECK(transcript_json(a[i]).dump() == transcript_json(b[i]).dump());
    }
    const auto pred = to_prediction(a.at(0));
    CHECK(pred.retrieved_ids == a[0].retrieved_ids);
}

TEST_CASE("unparsed answers are flagged") {
    AnswerResult r;
    r.qid = "q";
    r.task = GenTask::infbench;
    r.raw = "hmm";
    r.parsed = parse_answer(r.task, r.raw);
    const auto j = transcript_json(r);
    CHECK(j["flags"].dump() == "[\"unparsed\"]");
    CHECK(j["answer"] == "hmm");
}

TEST_CASE("SFT mixing") {
    std::vector<Chunk> chunks = store("d1", 12);
    const auto other = store("d2", 12);
    chunks.insert(chunks.end(), other.begin(), other.end());
    std::map<std::string, Mindscape> ms;
    ms["d1"].doc_id = "d1";
    ms["d1"].global_summary = "S1";
    ms["d2"].doc_id = "d2";
    ms["d2"].global_summary = "S2";
    const auto rec = chunk_record("q1", "d1", {chunk_id("d1", 3), chunk_id("d1", 7)});

    SECTION("fixed noise count and composition") {
        MixConfig mix{3, 3, 5};
        const auto b = build_sft_examples({rec}, chunks, ms, {}, mix);
        REQUIRE(b.examples.size() == 1);
        const auto& ex = b.examples[0];
        CHECK(ex.silver_count == 2);
        CHECK(ex.noise_count == 3);
        CHECK(ex.chunk_order.size() == 5);
        for (const auto& id : ex.chunk_order) CHECK(id.rfind("d1:", 0) == 0);
        std::set<std::string> uniq(ex.chunk_order.begin(), ex.chunk_order.end());
        CHECK(uniq.size() == 5);
        CHECK(ex.target == "the tower");
        CHECK(ex.input.find("S1") != std::string::npos);
        CHECK(ex.input.find("S2") == std::string::npos);
        // Chunk text appears in chunk_order order.
        std::size_t last = 0;
        for (std::size_t i = 0; i < ex.chunk_order.size(); ++i) {
            const auto at = ex.input.find("[Chunk " + std::to_string(i + 1) + "]");
            REQUIRE(at != std::string::npos);
            CHECK(at >= last);
            last = at;
        }
    }

    SECTION("zero noise") {
        const auto b = build_sft_examples({rec}, chunks, ms, {}, {0, 0, 1});
        CHECK(b.examples.at(0).noise_count == 0);
        CHECK(b.examples[0].chunk_order.size() == 2);
    }

    SECTION("seeded determinism") {
        const auto a = build_sft_examples({rec}, chunks, ms, {}, {1, 3, 9});
        const auto b = build_sft_examples({rec}, chunks, ms, {}, {1, 3, 9});
        CHECK(a.examples[0].chunk_order == b.examples[0].chunk_order);
        CHECK(to_json(a.examples[0]).dump() == to_json(b.examples[0]).dump());
    }

    SECTION("noise count stays in range") {
        for (std::uint64_t s = 0; s < 200; ++s) {
            const auto b = build_sft_examples({rec}, chunks, ms, {}, {1, 3, s});
            const auto n = b.examples[0].noise_count;
            CHECK(n >= 1);
            CHECK(n <= 3);
        }
    }

    SECTION("silver position is uniform over seeds") {
        // Five slots, 1000 seeds: chi-square with 4 degrees of freedom against
        // the 0.01 critical value 13.277.
        std::array<int, 5> counts{};
        for (std::uint64_t s = 0; s < 1000; ++s) {
            const auto b = build_sft_examples({rec}, chunks, ms, {}, {3, 3, s});
            const auto& order = b.examples[0].chunk_order;
            const auto pos = std::find(order.begin(), order.end(), rec.silver_ids[0]) - order.begin();
            ++counts.at(static_cast<std::size_t>(pos));
        }
        double chi2 = 0.0;
        for (int c : counts) chi2 += (c - 200.0) * (c - 200.0) / 200.0;
        CHECK(chi2 < 13.277);
    }

    SECTION("skips and errors") {
        auto node = rec;
        node.task = EvidenceTask::node;
        auto empty = rec;
        empty.silver_ids.clear();
        const auto b = build_sft_examples({node, empty}, chunks, ms, {}, {});
        CHECK(b.examples.empty());
        CHECK(b.skipped_node_task == 1);
        CHECK(b.skipped_empty == 1);

        auto leak = rec;
        leak.silver_ids.push_back(chunk_id("d2", 1));
        CHECK_THROWS_AS(build_sft_examples({leak}, chunks, ms, {}, {}), Error);
        auto ghost = chunk_record("q", "d3", {chunk_id("d1", 1)});
        CHECK_THROWS_AS(build_sft_examples({ghost}, chunks, ms, {}, {}), Error);
        CHECK_THROWS_AS(build_sft_examples({rec}, chunks, ms, {}, {3, 1, 0}), Error);
    }

    SECTION("QA rows set the variant and target") {
        QaItem q;
        q.qid = "q1";
        q.doc_id = "d1";
        q.task = GenTask::nocha;
        q.question = "Claim";
        q.label = false;
        const auto b = build_sft_examples({rec}, chunks, ms, {q}, {1, 1, 0});
        CHECK(b.examples[0].task == GenTask::nocha);
        CHECK(b.examples[0].target == "FALSE");
    }
}
