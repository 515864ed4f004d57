#pragma once

#include <string>
#include <vector>

namespace mga::selfcheck {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Gradient fidelity of the three losses and their combination against
// central finite differences on random instances.
std::vector<CheckResult> gradient_fidelity();

// Closed-form loss values: uniform contrastive = ln N, single-example
// alignment = 0, cross-entropy at the symmetric point = ln 2.
std::vector<CheckResult> analytic_loss_values();

// Appending blank padded sentences changes no loss value and no parameter
// gradient.
std::vector<CheckResult> masking_contract();

// Hand-computed tf-idf values on the 3-sentence corpus.
std::vector<CheckResult> tfidf_oracle();

// K-means objective monotonicity, the degenerate K = N case and retrieval
// against the brute-force per-cluster argmax.
std::vector<CheckResult> clustering_retrieval();

// AUC oracles and the random-score Monte Carlo band.
std::vector<CheckResult> metric_oracles();

// Bitwise reproducibility of training and of the file round-trips.
std::vector<CheckResult> reproducibility();

std::vector<CheckResult> run_all();

bool all_passed(const std::vector<CheckResult>& results);

} // namespace mga::selfcheck
