#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "mga/error.hpp"
#include "mga/io.hpp"
#include "mga/knowledge.hpp"
#include "mga/rng.hpp"
#include "oracles.hpp"

using namespace mga;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig cfg;
    cfg.dim = 8;
    cfg.hidden = 16;
    cfg.patch_side = 4;
    cfg.buckets = 64;
    return cfg;
}

double weight_of(const SparseVec& vec, const Vocabulary& vocab, const std::string& term) {
    auto it = vocab.terms.find(term);
    if (it == vocab.terms.end()) return 0.0;
    for (auto [index, value] : vec) {
        if (index == it->second.index) return value;
    }
    return 0.0;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("split_report applies the terminator rule") {
    CHECK(split_report("Heart normal. No effusion.") ==
          std::vector<std::string>{"Heart normal", "No effusion"});
    CHECK(split_report("").empty());
    CHECK(split_report("One sentence") == std::vector<std::string>{"One sentence"});
    CHECK(split_report("A! B? C.") == std::vector<std::string>{"A", "B", "C"});
}

TEST_CASE("tf-idf matches the hand-computed 3-sentence corpus") {
    std::vector<std::string> corpus = {"no pleural effusion", "small pleural effusion",
                                       "clear lungs"};
    Vocabulary vocab = tfidf_fit(corpus);

    // "pleural" appears in 2 of 3 sentences; sentence 1 has 3 tokens
    SparseVec v1 = tfidf_vector(corpus[0], vocab);
    CHECK(std::abs(weight_of(v1, vocab, "pleural") - std::log(1.5) / 3.0) < 1e-15);
    CHECK(std::abs(weight_of(v1, vocab, "pleural") - 0.135155) < 1e-6);

    // "clear" appears once in 3 sentences; sentence 3 has 2 tokens
    SparseVec v3 = tfidf_vector(corpus[2], vocab);
    CHECK(std::abs(weight_of(v3, vocab, "clear") - std::log(3.0) / 2.0) < 1e-15);
    CHECK(std::abs(weight_of(v3, vocab, "clear") - 0.549306) < 1e-6);
}

TEST_CASE("a ubiquitous term weighs exactly zero") {
    Vocabulary vocab = tfidf_fit({"a b", "a c", "a d"});
    CHECK(vocab.terms.at("a").idf == 0.0);
    SparseVec v = tfidf_vector("a b", vocab);
    CHECK(weight_of(v, vocab, "a") == 0.0);
    CHECK(weight_of(v, vocab, "b") > 0.0);
}

TEST_CASE("out-of-vocabulary terms get weight zero at transform time") {
    Vocabulary vocab = tfidf_fit({"heart size normal"});
    SparseVec v = tfidf_vector("unseen words only", vocab);
    CHECK(v.empty());
}

TEST_CASE("tfidf_fit rejects an empty corpus") {
    CHECK_THROWS_AS(tfidf_fit({}), ConfigError);
}

TEST_CASE("k-means with K = N distinct points reaches objective zero") {
    std::vector<SparseVec> points;
    for (std::uint32_t i = 0; i < 5; ++i) {
        points.push_back({{0, static_cast<double>(i) + 1.0}, {1, 2.0 * i}});
    }
    KMeansResult result = kmeans(points, 2, 5, 50, 123);
    CHECK(result.objective_history.back() == 0.0);
    std::set<std::uint32_t> clusters(result.assignments.begin(), result.assignments.end());
    CHECK(clusters.size() == 5);
}

TEST_CASE("k-means on the 1-D quartet matches the exhaustive oracle") {
    std::vector<double> xs = {0.0, 1.0, 10.0, 11.0};
    std::vector<SparseVec> points;
    for (double x : xs) points.push_back({{0, x}});

    auto best = oracle::best_two_partition_1d(xs);
    REQUIRE(best.objective == doctest::Approx(1.0)); // (0,1) and (10,11)

    KMeansResult result = kmeans(points, 1, 2, 50, 7);
    CHECK(result.objective_history.back() == doctest::Approx(best.objective).epsilon(1e-12));
    CHECK(result.assignments[0] == result.assignments[1]);
    CHECK(result.assignments[2] == result.assignments[3]);
    CHECK(result.assignments[0] != result.assignments[2]);
    std::set<double> centroids = {result.centroids[0][0], result.centroids[1][0]};
    CHECK(centroids == std::set<double>{0.5, 10.5});
}

TEST_CASE("k-means is deterministic per seed and monotone in objective") {
    Rng rng(31);
    for (int run = 0; run < 20; ++run) {
        std::vector<SparseVec> points;
        std::size_t n = 20 + rng.index(30);
        std::size_t dim = 4;
        for (std::size_t i = 0; i < n; ++i) {
            SparseVec v;
            for (std::uint32_t d = 0; d < dim; ++d) {
                v.emplace_back(d, rng.uniform(-1.0, 1.0));
            }
            points.push_back(std::move(v));
        }
        std::uint64_t seed = rng.next();
        KMeansResult a = kmeans(points, dim, 4, 50, seed);
        KMeansResult b = kmeans(points, dim, 4, 50, seed);
        CHECK(a.assignments == b.assignments);
        for (std::size_t i = 1; i < a.objective_history.size(); ++i) {
            CHECK(a.objective_history[i] <= a.objective_history[i - 1]);
        }
    }
}

TEST_CASE("k-means rejects k above the distinct vector count") {
    std::vector<SparseVec> points = {{{0, 1.0}}, {{0, 1.0}}, {{0, 2.0}}};
    CHECK(distinct_vector_count(points) == 2);
    CHECK_THROWS_AS(kmeans(points, 1, 3, 10, 1), ConfigError);
}

TEST_CASE("build_dictionary dedups exact duplicate sentences") {
    EncoderConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 1);
    std::vector<std::string> reports = {"Heart normal. No effusion.",
                                        "No effusion. Heart normal."};
    SentenceDictionary dict = build_dictionary(reports, 2, cfg, params.text);
    CHECK(dict.sentences.size() == 2);
    CHECK(dict.sentences[0] == "Heart normal");
    CHECK(dict.sentences[1] == "No effusion");
}

TEST_CASE("dictionary invariants hold on a 200-sentence corpus") {
    EncoderConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 2);
    Rng rng(37);
    std::vector<std::string> words = {"heart",  "lung",   "pleural", "edema",    "clear",
                                      "normal", "severe", "mild",    "effusion", "right",
                                      "left",   "upper",  "lower",   "stable",   "acute"};
    std::vector<std::string> reports;
    for (int i = 0; i < 200; ++i) {
        std::string sentence;
        std::size_t len = 3 + rng.index(5);
        for (std::size_t w = 0; w < len; ++w) {
            if (w) sentence += " ";
            sentence += words[rng.index(words.size())];
        }
        sentence += " s" + std::to_string(i) + ".";
        reports.push_back(sentence);
    }
    SentenceDictionary dict = build_dictionary(reports, 10, cfg, params.text);
    CHECK(dict.sentences.size() == 200);
    CHECK(dict.k == 10);
    REQUIRE(dict.cluster_of.size() == 200);
    for (auto c : dict.cluster_of) {
        CHECK(c < 10);
    }
    CHECK(dict.embeddings.shape() == Shape{200, cfg.dim});
    for (std::size_t i = 0; i < 200; ++i) {
        double sq = 0.0;
        for (std::size_t d = 0; d < cfg.dim; ++d) sq += dict.embeddings.at2(i, d) * dict.embeddings.at2(i, d);
        CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-9);
    }

    SUBCASE("retrieval equals the brute-force per-cluster argmax oracle") {
        for (int q = 0; q < 20; ++q) {
            Tensor query({1, cfg.dim});
            double sq = 0.0;
            for (std::size_t d = 0; d < cfg.dim; ++d) {
                double x = rng.uniform(-1.0, 1.0);
                query.mutable_values()[d] = x;
                sq += x * x;
            }
            for (std::size_t d = 0; d < cfg.dim; ++d) {
                query.mutable_values()[d] /= std::sqrt(sq);
            }

            auto retrieved = generate_report(query, dict, 5);
            REQUIRE(retrieved.size() == 5);

            // oracle: exhaustive scan
            std::vector<double> sims(200);
            for (std::size_t i = 0; i < 200; ++i) {
                double dot = 0.0;
                for (std::size_t d = 0; d < cfg.dim; ++d) {
                    dot += query.at(d) * dict.embeddings.at2(i, d);
                }
                sims[i] = dot;
            }
            std::map<std::uint32_t, std::size_t> winner;
            for (std::size_t i = 0; i < 200; ++i) {
                auto c = dict.cluster_of[i];
                if (!winner.count(c) || sims[i] > sims[winner[c]]) winner[c] = i;
            }
            std::vector<std::size_t> expected;
            for (auto [c, i] : winner) expected.push_back(i);
            std::sort(expected.begin(), expected.end(), [&sims](std::size_t a, std::size_t b) {
                if (sims[a] != sims[b]) return sims[a] > sims[b];
                return a < b;
            });
            expected.resize(5);
            for (std::size_t r = 0; r < 5; ++r) {
                CHECK(retrieved[r].sentence_index == expected[r]);
            }

            // no two retrieved sentences share a cluster
            std::set<std::uint32_t> clusters;
            for (const auto& r : retrieved) clusters.insert(r.cluster);
            CHECK(clusters.size() == retrieved.size());
        }
    }
}

TEST_CASE("k = 1 puts every sentence in one cluster") {
    EncoderConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 3);
    SentenceDictionary dict =
        build_dictionary({"Heart normal. No effusion. Mild edema."}, 1, cfg, params.text);
    for (auto c : dict.cluster_of) {
        CHECK(c == 0);
    }
}

TEST_CASE("a query equal to a stored embedding retrieves that sentence first") {
    EncoderConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 4);
    SentenceDictionary dict = build_dictionary(
        {"Severe edema. Clear lungs. Small effusion. Stable heart."}, 4, cfg, params.text);
    REQUIRE(dict.sentences.size() == 4);
    Tensor query({1, cfg.dim});
    for (std::size_t d = 0; d < cfg.dim; ++d) {
        query.mutable_values()[d] = dict.embeddings.at2(2, d);
    }
    auto retrieved = generate_report(query, dict, 4);
    REQUIRE(!retrieved.empty());
    CHECK(retrieved[0].sentence_index == 2);
    CHECK(retrieved[0].similarity == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(retrieved.size() == dict.nonempty_cluster_count());
}

TEST_CASE("generate_report rejects an empty dictionary") {
    SentenceDictionary dict;
    Tensor query({1, 4});
    CHECK_THROWS_AS(generate_report(query, dict, 5), ConfigError);
}

TEST_CASE("dictionary round-trips bitwise through JSON") {
    EncoderConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 5);
    SentenceDictionary dict = build_dictionary(
        {"Severe edema. Clear lungs.", "Small effusion. Severe edema. Stable heart."}, 2, cfg,
        params.text);
    std::string path = temp_path("mga_dict_test.json");
    save_dictionary(dict, path);
    SentenceDictionary loaded = load_dictionary(path);

    CHECK(loaded.sentences == dict.sentences);
    CHECK(loaded.cluster_of == dict.cluster_of);
    CHECK(loaded.k == dict.k);
    CHECK(loaded.embeddings.values() == dict.embeddings.values());
    CHECK(loaded.tfidf_vectors == dict.tfidf_vectors);

    // identical retrieval, and a second save produces identical bytes
    Rng rng(41);
    Tensor query({1, cfg.dim});
    for (std::size_t d = 0; d < cfg.dim; ++d) query.mutable_values()[d] = rng.uniform(-1, 1);
    auto a = generate_report(query, dict, 3);
    auto b = generate_report(query, loaded, 3);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].sentence_index == b[i].sentence_index);
        CHECK(a[i].similarity == b[i].similarity);
    }
    std::string path2 = temp_path("mga_dict_test2.json");
    save_dictionary(loaded, path2);
    CHECK(read_text_file(path) == read_text_file(path2));
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("prompt pairs instantiate the templates") {
    EncoderConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 6);
    PromptPairSet prompts = make_prompt_pairs({"edema", "pneumonia"}, "There is {class}.",
                                              "There is no {class}.", cfg, params.text);
    CHECK(prompts.positive_texts[0] == "There is edema.");
    CHECK(prompts.negative_texts[0] == "There is no edema.");
    CHECK(prompts.positive_embeddings.shape() == Shape{2, cfg.dim});
    CHECK(prompts.negative_embeddings.shape() == Shape{2, cfg.dim});
    for (std::size_t c = 0; c < 2; ++c) {
        bool differ = false;
        for (std::size_t d = 0; d < cfg.dim; ++d) {
            if (prompts.positive_embeddings.at2(c, d) != prompts.negative_embeddings.at2(c, d)) {
                differ = true;
                break;
            }
        }
        CHECK(differ);
    }
}

TEST_CASE("prompt pair construction rejects bad inputs") {
    EncoderConfig cfg = tiny_config();
    ModelParams params = ModelParams::init(cfg, 7);
    CHECK_THROWS_AS(make_prompt_pairs({"edema", "edema"}, "There is {class}.",
                                      "There is no {class}.", cfg, params.text),
                    ConfigError);
    CHECK_THROWS_AS(make_prompt_pairs({"edema"}, "no placeholder", "There is no {class}.", cfg,
                                      params.text),
                    ConfigError);
    CHECK_THROWS_AS(make_prompt_pairs({"edema"}, "same {class}", "same {class}", cfg,
                                      params.text),
                    ConfigError);
}
