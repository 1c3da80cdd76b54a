#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "ppol/fingerprint.hpp"
#include "ppol/transcript.hpp"

namespace testutil {

inline std::filesystem::path test_data(const std::string& name) { return std::filesystem::path(PPOL_TEST_DATA) / name; }
inline std::filesystem::path share_data(const std::string& name) {
    return std::filesystem::path(PPOL_SHARE_DATA) / name;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("ppol-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline ppol::Episode make_episode(const std::string& id, std::initializer_list<std::string> user_texts,
                                  ppol::Source source = ppol::Source::human) {
    ppol::Episode e;
    e.episode_id = id;
    e.task_id = "t0";
    e.source = source;
    for (const auto& text : user_texts) {
        e.add_turn(ppol::Role::user, text);
        e.add_turn(ppol::Role::agent, "noted");
    }
    return e;
}

inline const ppol::LexiconSet& default_lexicon() {
    static const ppol::LexiconSet lex = ppol::load_lexicons(share_data("lexicons/default.json"));
    return lex;
}

}  // namespace testutil
