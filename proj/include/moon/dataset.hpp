#ifndef MOON_DATASET_HPP
#define MOON_DATASET_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace moon {

enum class Grade : int { G1 = 1, G2 = 2, G3 = 3 };

enum class Organ : int { Esophagus = 0, Liver = 1, Spleen = 2 };

// The two binary tasks of the grading problem.
enum class Task : int { GeG2 = 0, G3 = 1 };

constexpr int kNumOrgans = 3;
constexpr int kNumThresholds = 2; // 3 grades -> 2 cumulative thresholds

const char* to_string(Grade g);
const char* to_string(Organ o);
const char* to_string(Task t);
Grade grade_from_string(const std::string& s);
Organ organ_from_string(const std::string& s);

// Cumulative binary encoding: t1 = [grade >= G2], t2 = [grade == G3].
struct OrdinalTarget {
    int t1 = 0, t2 = 0;
};

OrdinalTarget ordinal_encode(Grade g);
int binarize_grade(Grade g, Task task);

struct CaseRecord {
    std::string id;
    std::map<Organ, std::string> volumes; // organ -> volume path
    Grade grade = Grade::G1;
    std::optional<std::string> lesion_mask; // synthetic ground truth only
};

struct DatasetManifest {
    int version = 1;
    bool roi_masked = false; // raw crops by default
    std::vector<CaseRecord> cases;
};

struct FoldSplit {
    int k = 0;
    uint64_t seed = 0;
    std::vector<std::vector<std::string>> folds;
};

struct SplitError : std::runtime_error {
    explicit SplitError(const std::string& msg) : std::runtime_error(msg) {}
};

// Paths inside the manifest are stored relative to the manifest file.
// check_files verifies every referenced volume exists.
void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path, bool check_files = true);

// Per-grade shuffle then round-robin with a fold cursor carried across
// grades, which bounds both per-grade and total fold imbalance at +-1.
FoldSplit stratified_kfold(const DatasetManifest& manifest, int k, uint64_t seed);

void save_split(const FoldSplit& s, const std::string& path);
FoldSplit load_split(const std::string& path);

} // namespace moon

#endif
