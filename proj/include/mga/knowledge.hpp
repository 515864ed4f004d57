#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mga/encoders.hpp"
#include "mga/tensor.hpp"

namespace mga {

// Split a report into sentences on '.', '!', '?'; trim whitespace, drop
// empties.
std::vector<std::string> split_report(const std::string& text);

// Term statistics over a sentence corpus. idf uses the natural log of
// corpus_size / document_frequency; document frequency counts distinct
// sentences containing the term.
struct Vocabulary {
    struct TermStat {
        std::size_t document_frequency = 0;
        double idf = 0.0;
        std::uint32_t index = 0; // dense feature index, sorted term order
    };
    std::map<std::string, TermStat> terms;
    std::size_t corpus_size = 0;

    std::size_t dim() const { return terms.size(); }
};

Vocabulary tfidf_fit(const std::vector<std::string>& sentences);

// Sparse tf-idf vector, sorted by feature index. Unseen terms get weight 0.
using SparseVec = std::vector<std::pair<std::uint32_t, double>>;
SparseVec tfidf_vector(const std::string& sentence, const Vocabulary& vocab);

struct KMeansResult {
    std::vector<std::uint32_t> assignments;
    std::vector<std::vector<double>> centroids;
    // within-cluster squared distance after each assignment step
    std::vector<double> objective_history;
};

// Lloyd iterations from k-means++ seeding. Ties in assignment break toward
// the lower cluster index; an emptied cluster is reseeded to the farthest
// point.
KMeansResult kmeans(const std::vector<SparseVec>& vectors, std::size_t dim, std::size_t k,
                    std::size_t max_iter, std::uint64_t seed);

std::size_t distinct_vector_count(const std::vector<SparseVec>& vectors);

struct SentenceDictionary {
    std::vector<std::string> sentences;   // unique, first-occurrence order
    std::vector<SparseVec> tfidf_vectors; // parallel to sentences
    std::vector<std::uint32_t> cluster_of;
    Tensor embeddings; // |sentences| x dim, unit rows
    std::size_t k = 0;
    Vocabulary vocab;

    std::size_t nonempty_cluster_count() const;
};

// Split + dedup + tf-idf + k-means + embed. k == 0 picks
// min(100, unique_count / 2), clamped to the distinct-vector count.
SentenceDictionary build_dictionary(const std::vector<std::string>& reports, std::size_t k,
                                    const EncoderConfig& config, const TextEncoderParams& params,
                                    std::uint64_t seed = 0, std::size_t max_iter = 100);

struct Retrieved {
    std::string sentence;
    std::size_t sentence_index;
    std::uint32_t cluster;
    double similarity;
};

// Per nonempty cluster take the argmax-cosine sentence against the image
// embedding; return the top_k cluster winners by similarity descending.
std::vector<Retrieved> generate_report(const Tensor& image_embedding,
                                       const SentenceDictionary& dictionary,
                                       std::size_t top_k = 5);

void save_dictionary(const SentenceDictionary& dictionary, const std::string& path);
SentenceDictionary load_dictionary(const std::string& path);

struct PromptPairSet {
    std::vector<std::string> class_names;
    std::vector<std::string> positive_texts;
    std::vector<std::string> negative_texts;
    Tensor positive_embeddings; // C x dim
    Tensor negative_embeddings; // C x dim
};

// Instantiate "{class}" in both templates and embed each sentence.
PromptPairSet make_prompt_pairs(const std::vector<std::string>& class_names,
                                const std::string& positive_template,
                                const std::string& negative_template,
                                const EncoderConfig& config, const TextEncoderParams& params);

// "{placeholder}" substitution used for prompts and synthetic reports.
std::string fill_template(const std::string& templ, const std::string& placeholder,
                          const std::string& value);

} // namespace mga
