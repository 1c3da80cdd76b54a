#include <doctest.h>

#include <fstream>

#include "ppol/common.hpp"
#include "ppol/transcript.hpp"
#include "unit/helpers.hpp"

using namespace ppol;
using testutil::TempDir;

namespace {

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
    std::ofstream out(path);
    for (const auto& l : lines)
        out << l << "\n";
}

const char* kRecordA =
    R"({"episode_id":"a","task_id":"t1","source":"human","turns":[{"role":"user","text":"hi"},{"role":"agent","text":"hello"}],"metadata":{"domain":"retail"}})";
const char* kRecordB =
    R"({"episode_id":"b","task_id":"t1","source":"persona_sim","persona_id":"p1","turns":[{"role":"user","text":"yo"}]})";

}  // namespace

TEST_CASE("load_corpus reads valid records") {
    TempDir dir;
    write_lines(dir / "c.jsonl", {kRecordA, kRecordB});
    const auto corpus = load_corpus(dir / "c.jsonl", Split::test);
    REQUIRE(corpus.episodes.size() == 2);
    CHECK(corpus.split == Split::test);
    CHECK(corpus.episodes[0].metadata.at("domain") == "retail");
    CHECK(corpus.episodes[1].persona_id == std::optional<std::string>("p1"));
    CHECK(corpus.episodes[0].turns[1].index == 1);
}

TEST_CASE("empty corpus file") {
    TempDir dir;
    write_lines(dir / "e.jsonl", {});
    CHECK(load_corpus(dir / "e.jsonl", Split::train).episodes.empty());
}

TEST_CASE("missing file is an io error") {
    try {
        load_corpus("/nonexistent/x.jsonl", Split::train);
        FAIL("expected throw");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::io);
    }
}

TEST_CASE("duplicate episode ids name both lines") {
    TempDir dir;
    write_lines(dir / "d.jsonl", {kRecordA, kRecordB, kRecordA});
    try {
        load_corpus(dir / "d.jsonl", Split::train);
        FAIL("expected throw");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("'a'") != std::string::npos);
        CHECK(msg.find("lines 1 and 3") != std::string::npos);
    }
}

TEST_CASE("missing field is reported with its name") {
    TempDir dir;
    write_lines(dir / "m.jsonl", {R"({"episode_id":"x","source":"human","turns":[]})"});
    try {
        load_corpus(dir / "m.jsonl", Split::train);
        FAIL("expected throw");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("task_id") != std::string::npos);
        CHECK(e.code() == ErrorCode::format);
    }
}

TEST_CASE("malformed lines are collected with line numbers") {
    TempDir dir;
    write_lines(dir / "bad.jsonl", {kRecordA, "{oops", kRecordB});
    std::vector<MalformedLine> bad;
    const auto corpus = load_corpus(dir / "bad.jsonl", Split::train, &bad);
    CHECK(corpus.episodes.size() == 2);
    REQUIRE(bad.size() == 1);
    CHECK(bad[0].line == 2);
    CHECK_THROWS_AS(load_corpus(dir / "bad.jsonl", Split::train), Error);
}

TEST_CASE("save then load is the identity") {
    TempDir dir;
    Rng rng(3);
    Corpus corpus;
    for (int i = 0; i < 25; ++i) {
        Episode e;
        e.episode_id = "e" + std::to_string(i);
        e.task_id = "t" + std::to_string(i % 3);
        e.source = static_cast<Source>(rng.below(3));
        if (e.source == Source::persona_sim || rng.below(2))
            e.persona_id = "p" + std::to_string(rng.below(9));
        const std::size_t n = rng.below(8);
        for (std::size_t k = 0; k < n; ++k)
            e.add_turn(static_cast<Role>(rng.below(4)), "text \"" + std::to_string(rng.below(1000)) + "\" \xc3\xa9\n");
        e.metadata["k"] = std::to_string(rng.below(5));
        corpus.episodes.push_back(e);
    }
    save_corpus(corpus, dir / "rt.jsonl");
    const auto back = load_corpus(dir / "rt.jsonl", Split::train);
    REQUIRE(back.episodes.size() == corpus.episodes.size());
    for (std::size_t i = 0; i < corpus.episodes.size(); ++i)
        CHECK(back.episodes[i] == corpus.episodes[i]);
}

TEST_CASE("append_episodes extends a corpus file") {
    TempDir dir;
    auto e1 = testutil::make_episode("one", {"hello"});
    auto e2 = testutil::make_episode("two", {"bye"});
    append_episodes({e1}, dir / "sub" / "a.jsonl");
    append_episodes({e2}, dir / "sub" / "a.jsonl");
    const auto back = load_corpus(dir / "sub" / "a.jsonl", Split::train);
    REQUIRE(back.episodes.size() == 2);
    CHECK(back.episodes[1] == e2);
}

TEST_CASE("user_turns filters by role") {
    Episode e;
    e.add_turn(Role::user, "hi");
    e.add_turn(Role::agent, "hello");
    e.add_turn(Role::user, "ok");
    CHECK(user_turns(e) == std::vector<std::string>{"hi", "ok"});

    Episode agent_only;
    agent_only.add_turn(Role::agent, "a");
    agent_only.add_turn(Role::agent, "b");
    CHECK(user_turns(agent_only).empty());

    // 10-turn mixed transcript: user turns at positions 0, 3, 6, 9
    Episode mixed;
    const Role pattern[] = {Role::user, Role::agent, Role::tool, Role::user, Role::agent,
                            Role::system, Role::user, Role::agent, Role::tool, Role::user};
    for (int i = 0; i < 10; ++i)
        mixed.add_turn(pattern[i], "m" + std::to_string(i));
    CHECK(user_turns(mixed) == std::vector<std::string>{"m0", "m3", "m6", "m9"});
}

TEST_CASE("user_turns count matches role count on random transcripts") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        Episode e;
        std::size_t users = 0;
        const std::size_t n = rng.below(20);
        for (std::size_t k = 0; k < n; ++k) {
            const auto role = static_cast<Role>(rng.below(4));
            users += role == Role::user;
            e.add_turn(role, "x");
        }
        CHECK(user_turns(e).size() == users);
    }
}

TEST_CASE("validate_episode") {
    auto good = testutil::make_episode("g", {"hi", "there"});
    CHECK(validate_episode(good).ok());

    auto persona = good;
    persona.source = Source::persona_sim;
    const auto copy = persona;
    const auto report = validate_episode(persona);
    CHECK(report.violations.size() == 1);
    CHECK(persona == copy);

    auto gap = good;
    gap.turns[1].index = 2;
    gap.turns.resize(2);
    const auto gap_report = validate_episode(gap);
    REQUIRE(gap_report.violations.size() == 1);
    CHECK(gap_report.violations[0].find("ordering") != std::string::npos);

    Episode tool_empty = testutil::make_episode("t", {"hi"});
    tool_empty.add_turn(Role::tool, "");
    CHECK(validate_episode(tool_empty).ok());
    tool_empty.add_turn(Role::agent, "");
    CHECK_FALSE(validate_episode(tool_empty).ok());
}

TEST_CASE("is_scorable honours the unscorable flag") {
    auto e = testutil::make_episode("s", {"hi"});
    CHECK(is_scorable(e));
    e.metadata[kMetaUnscorable] = "true";
    CHECK_FALSE(is_scorable(e));
    Episode agent_only;
    agent_only.add_turn(Role::agent, "x");
    CHECK_FALSE(is_scorable(agent_only));
}

TEST_CASE("enum text round trips") {
    for (auto r : {Role::user, Role::agent, Role::system, Role::tool})
        CHECK(parse_role(to_string(r)) == r);
    for (auto s : {Source::human, Source::base_sim, Source::persona_sim})
        CHECK(parse_source(to_string(s)) == s);
    CHECK_THROWS_AS(parse_source("robot"), Error);
}
