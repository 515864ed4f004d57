#include "mga/knowledge.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "json.hpp"
#include "mga/error.hpp"
#include "mga/kernels.hpp"
#include "mga/io.hpp"
#include "mga/rng.hpp"

namespace mga {

std::vector<std::string> split_report(const std::string& text) {
    std::vector<std::string> sentences;
    std::string current;
    auto flush = [&] {
        std::size_t begin = current.find_first_not_of(" \t\r\n");
        if (begin != std::string::npos) {
            std::size_t end = current.find_last_not_of(" \t\r\n");
            sentences.push_back(current.substr(begin, end - begin + 1));
        }
        current.clear();
    };
    for (char ch : text) {
        if (ch == '.' || ch == '!' || ch == '?') {
            flush();
        } else {
            current.push_back(ch);
        }
    }
    flush();
    return sentences;
}

Vocabulary tfidf_fit(const std::vector<std::string>& sentences) {
    if (sentences.empty()) {
        throw ConfigError("tfidf_fit: empty corpus");
    }
    Vocabulary vocab;
    vocab.corpus_size = sentences.size();
    for (const std::string& sentence : sentences) {
        auto tokens = tokenize(sentence);
        std::set<std::string> distinct(tokens.begin(), tokens.end());
        for (const std::string& term : distinct) {
            vocab.terms[term].document_frequency += 1;
        }
    }
    std::uint32_t index = 0;
    double n = static_cast<double>(vocab.corpus_size);
    for (auto& [term, stat] : vocab.terms) {
        stat.idf = std::log(n / static_cast<double>(stat.document_frequency));
        stat.index = index++;
    }
    return vocab;
}

SparseVec tfidf_vector(const std::string& sentence, const Vocabulary& vocab) {
    auto tokens = tokenize(sentence);
    if (tokens.empty()) {
        return {};
    }
    std::map<std::uint32_t, double> counts; // index -> occurrences
    std::map<std::uint32_t, double> idf_of;
    for (const std::string& tok : tokens) {
        auto it = vocab.terms.find(tok);
        if (it == vocab.terms.end()) continue; // out-of-vocabulary: weight 0
        counts[it->second.index] += 1.0;
        idf_of[it->second.index] = it->second.idf;
    }
    SparseVec out;
    out.reserve(counts.size());
    double inv_len = 1.0 / static_cast<double>(tokens.size());
    for (auto& [index, count] : counts) {
        double weight = count * inv_len * idf_of[index];
        if (weight != 0.0) {
            out.emplace_back(index, weight);
        }
    }
    return out;
}

namespace {

double sparse_dense_dist2(const SparseVec& x, const std::vector<double>& centroid,
                          double centroid_sq) {
    // ||x - c||^2 = ||c||^2 + sum_i (x_i^2 - 2 x_i c_i)
    double acc = centroid_sq;
    for (auto [index, value] : x) {
        acc += value * value - 2.0 * value * centroid[index];
    }
    return acc < 0.0 ? 0.0 : acc;
}

} // namespace

std::size_t distinct_vector_count(const std::vector<SparseVec>& vectors) {
    std::set<SparseVec> seen(vectors.begin(), vectors.end());
    return seen.size();
}

KMeansResult kmeans(const std::vector<SparseVec>& vectors, std::size_t dim, std::size_t k,
                    std::size_t max_iter, std::uint64_t seed) {
    const std::size_t n = vectors.size();
    if (n == 0) {
        throw ConfigError("kmeans: no vectors");
    }
    if (max_iter < 1) {
        throw ConfigError("kmeans: max_iter must be >= 1");
    }
    if (k == 0 || k > distinct_vector_count(vectors)) {
        throw ConfigError("kmeans: k = " + std::to_string(k) + " exceeds the " +
                          std::to_string(distinct_vector_count(vectors)) +
                          " distinct vectors");
    }

    auto densify = [dim](const SparseVec& v) {
        std::vector<double> dense(dim, 0.0);
        for (auto [index, value] : v) dense[index] = value;
        return dense;
    };

    // k-means++ seeding
    Rng rng(seed);
    std::vector<std::vector<double>> centroids;
    centroids.reserve(k);
    std::vector<double> nearest_dist2(n, 0.0);
    centroids.push_back(densify(vectors[rng.index(n)]));
    for (std::size_t c = 1; c < k; ++c) {
        const auto& last = centroids.back();
        double last_sq = 0.0;
        for (double v : last) last_sq += v * v;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d2 = sparse_dense_dist2(vectors[i], last, last_sq);
            if (c == 1 || d2 < nearest_dist2[i]) nearest_dist2[i] = d2;
            total += nearest_dist2[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double r = rng.uniform() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += nearest_dist2[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
                pick = i;
            }
        }
        centroids.push_back(densify(vectors[pick]));
    }

    KMeansResult result;
    result.assignments.assign(n, 0);
    std::vector<double> centroid_sq(k, 0.0);
    auto refresh_norms = [&] {
        for (std::size_t c = 0; c < k; ++c) {
            double sq = 0.0;
            for (double v : centroids[c]) sq += v * v;
            centroid_sq[c] = sq;
        }
    };

    std::vector<std::uint32_t> previous;
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        refresh_norms();

        // assignment; independent per point
        std::vector<double> assigned_dist2(n, 0.0);
        double objective = 0.0;
#pragma omp parallel for schedule(static) num_threads(kernels::thread_count())
        for (long long pi = 0; pi < static_cast<long long>(n); ++pi) {
            const auto i = static_cast<std::size_t>(pi);
            std::uint32_t best = 0;
            double best_d2 = sparse_dense_dist2(vectors[i], centroids[0], centroid_sq[0]);
            for (std::size_t c = 1; c < k; ++c) {
                double d2 = sparse_dense_dist2(vectors[i], centroids[c], centroid_sq[c]);
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = static_cast<std::uint32_t>(c);
                }
            }
            result.assignments[i] = best;
            assigned_dist2[i] = best_d2;
        }
        for (double d2 : assigned_dist2) objective += d2;
        result.objective_history.push_back(objective);

        if (!previous.empty() && previous == result.assignments) {
            break;
        }
        previous = result.assignments;

        // update
        std::vector<std::size_t> counts(k, 0);
        for (auto& c : centroids) std::fill(c.begin(), c.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto c = result.assignments[i];
            ++counts[c];
            for (auto [index, value] : vectors[i]) centroids[c][index] += value;
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            double inv = 1.0 / static_cast<double>(counts[c]);
            for (double& v : centroids[c]) v *= inv;
        }
        // reseed emptied clusters to the farthest assigned point
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            std::size_t farthest = 0;
            double far_d2 = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (assigned_dist2[i] > far_d2) {
                    far_d2 = assigned_dist2[i];
                    farthest = i;
                }
            }
            centroids[c] = densify(vectors[farthest]);
            assigned_dist2[farthest] = 0.0; // avoid picking the same point twice
        }
    }
    result.centroids = std::move(centroids);
    return result;
}

std::size_t SentenceDictionary::nonempty_cluster_count() const {
    std::set<std::uint32_t> seen(cluster_of.begin(), cluster_of.end());
    return seen.size();
}

SentenceDictionary build_dictionary(const std::vector<std::string>& reports, std::size_t k,
                                    const EncoderConfig& config, const TextEncoderParams& params,
                                    std::uint64_t seed, std::size_t max_iter) {
    if (reports.empty()) {
        throw ConfigError("build_dictionary: no reports");
    }
    SentenceDictionary dict;
    std::unordered_map<std::string, std::size_t> seen;
    for (const std::string& report : reports) {
        for (std::string& sentence : split_report(report)) {
            if (seen.emplace(sentence, dict.sentences.size()).second) {
                dict.sentences.push_back(std::move(sentence));
            }
        }
    }
    if (dict.sentences.empty()) {
        throw ConfigError("build_dictionary: reports contain no sentences");
    }

    dict.vocab = tfidf_fit(dict.sentences);
    dict.tfidf_vectors.reserve(dict.sentences.size());
    for (const std::string& sentence : dict.sentences) {
        dict.tfidf_vectors.push_back(tfidf_vector(sentence, dict.vocab));
    }

    std::size_t distinct = distinct_vector_count(dict.tfidf_vectors);
    if (k == 0) {
        k = std::min<std::size_t>(100, std::max<std::size_t>(1, dict.sentences.size() / 2));
        k = std::min(k, distinct);
    }
    dict.k = k;
    dict.cluster_of = kmeans(dict.tfidf_vectors, dict.vocab.dim(), k, max_iter, seed).assignments;

    std::vector<Tensor> rows;
    rows.reserve(dict.sentences.size());
    for (const std::string& sentence : dict.sentences) {
        rows.push_back(embed_sentence(sentence, config, params));
    }
    dict.embeddings = rows.size() == 1 ? rows[0] : concat(rows, 0);
    return dict;
}

std::vector<Retrieved> generate_report(const Tensor& image_embedding,
                                       const SentenceDictionary& dictionary,
                                       std::size_t top_k) {
    if (dictionary.sentences.empty()) {
        throw ConfigError("generate_report: empty dictionary");
    }
    if (image_embedding.size() != dictionary.embeddings.extent(1)) {
        throw ShapeError("generate_report: query dimension " +
                         std::to_string(image_embedding.size()) + " vs dictionary " +
                         std::to_string(dictionary.embeddings.extent(1)));
    }
    const std::size_t dim = dictionary.embeddings.extent(1);
    const auto& query = image_embedding.values();
    double query_norm = 0.0;
    for (double v : query) query_norm += v * v;
    query_norm = std::sqrt(query_norm);

    // cosine between the query and each stored embedding; rows are unit norm
    std::vector<double> similarity(dictionary.sentences.size());
    for (std::size_t i = 0; i < similarity.size(); ++i) {
        double dot = 0.0;
        for (std::size_t d = 0; d < dim; ++d) dot += query[d] * dictionary.embeddings.at2(i, d);
        similarity[i] = query_norm > 0.0 ? dot / query_norm : 0.0;
    }

    // per-cluster argmax, ties toward the lower sentence index
    std::map<std::uint32_t, std::size_t> winner;
    for (std::size_t i = 0; i < similarity.size(); ++i) {
        auto cluster = dictionary.cluster_of[i];
        auto it = winner.find(cluster);
        if (it == winner.end() || similarity[i] > similarity[it->second]) {
            winner[cluster] = i;
        }
    }

    std::vector<Retrieved> out;
    out.reserve(winner.size());
    for (auto [cluster, index] : winner) {
        out.push_back(Retrieved{dictionary.sentences[index], index, cluster, similarity[index]});
    }
    std::sort(out.begin(), out.end(), [](const Retrieved& a, const Retrieved& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.sentence_index < b.sentence_index;
    });
    if (out.size() > top_k) out.resize(top_k);
    return out;
}

void save_dictionary(const SentenceDictionary& dictionary, const std::string& path) {
    nlohmann::json doc;
    doc["version"] = 1;
    doc["sentences"] = dictionary.sentences;
    doc["clusters"] = dictionary.cluster_of;
    doc["k"] = dictionary.k;
    nlohmann::json vocab = nlohmann::json::object();
    for (const auto& [term, stat] : dictionary.vocab.terms) {
        vocab[term] = {stat.document_frequency, stat.idf};
    }
    doc["vocab"] = std::move(vocab);
    nlohmann::json rows = nlohmann::json::array();
    const std::size_t dim = dictionary.embeddings.extent(1);
    for (std::size_t i = 0; i < dictionary.sentences.size(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t d = 0; d < dim; ++d) row.push_back(dictionary.embeddings.at2(i, d));
        rows.push_back(std::move(row));
    }
    doc["embeddings"] = std::move(rows);
    atomic_write_text(path, doc.dump());
}

SentenceDictionary load_dictionary(const std::string& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("load_dictionary: " + path + ": " + e.what());
    }
    try {
        if (doc.at("version").get<int>() != 1) {
            throw IoError("load_dictionary: unsupported version " +
                          doc.at("version").dump());
        }
        SentenceDictionary dict;
        dict.sentences = doc.at("sentences").get<std::vector<std::string>>();
        dict.cluster_of = doc.at("clusters").get<std::vector<std::uint32_t>>();
        dict.k = doc.at("k").get<std::size_t>();
        dict.vocab.corpus_size = dict.sentences.size();
        std::uint32_t index = 0;
        for (auto& [term, stat] : doc.at("vocab").items()) {
            Vocabulary::TermStat ts;
            ts.document_frequency = stat.at(0).get<std::size_t>();
            ts.idf = stat.at(1).get<double>();
            ts.index = index++;
            dict.vocab.terms.emplace(term, ts);
        }
        auto rows = doc.at("embeddings");
        if (rows.empty() || rows.size() != dict.sentences.size() ||
            dict.cluster_of.size() != dict.sentences.size()) {
            throw IoError("load_dictionary: inconsistent table sizes in " + path);
        }
        std::size_t dim = rows[0].size();
        Tensor embeddings({dict.sentences.size(), dim});
        auto& ev = embeddings.mutable_values();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t d = 0; d < dim; ++d) {
                ev[i * dim + d] = rows[i][d].get<double>();
            }
        }
        dict.embeddings = std::move(embeddings);
        // tf-idf vectors are not persisted; rebuild from the stored vocab
        dict.tfidf_vectors.reserve(dict.sentences.size());
        for (const std::string& sentence : dict.sentences) {
            dict.tfidf_vectors.push_back(tfidf_vector(sentence, dict.vocab));
        }
        return dict;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("load_dictionary: malformed document " + path + ": " + e.what());
    }
}

std::string fill_template(const std::string& templ, const std::string& placeholder,
                          const std::string& value) {
    std::string token = "{" + placeholder + "}";
    std::string out = templ;
    std::size_t pos = 0;
    while ((pos = out.find(token, pos)) != std::string::npos) {
        out.replace(pos, token.size(), value);
        pos += value.size();
    }
    return out;
}

PromptPairSet make_prompt_pairs(const std::vector<std::string>& class_names,
                                const std::string& positive_template,
                                const std::string& negative_template,
                                const EncoderConfig& config, const TextEncoderParams& params) {
    if (class_names.empty()) {
        throw ConfigError("make_prompt_pairs: no classes");
    }
    if (positive_template.find("{class}") == std::string::npos ||
        negative_template.find("{class}") == std::string::npos) {
        throw ConfigError("make_prompt_pairs: templates must contain a {class} placeholder");
    }
    {
        std::set<std::string> unique(class_names.begin(), class_names.end());
        if (unique.size() != class_names.size()) {
            throw ConfigError("make_prompt_pairs: duplicate class names");
        }
    }
    PromptPairSet out;
    out.class_names = class_names;
    std::vector<Tensor> pos_rows, neg_rows;
    for (const std::string& name : class_names) {
        std::string pos = fill_template(positive_template, "class", name);
        std::string neg = fill_template(negative_template, "class", name);
        if (pos == neg) {
            throw ConfigError("make_prompt_pairs: positive and negative prompts coincide for " +
                              name);
        }
        out.positive_texts.push_back(pos);
        out.negative_texts.push_back(neg);
        pos_rows.push_back(embed_sentence(pos, config, params));
        neg_rows.push_back(embed_sentence(neg, config, params));
    }
    out.positive_embeddings = pos_rows.size() == 1 ? pos_rows[0] : concat(pos_rows, 0);
    out.negative_embeddings = neg_rows.size() == 1 ? neg_rows[0] : concat(neg_rows, 0);
    return out;
}

} // namespace mga
