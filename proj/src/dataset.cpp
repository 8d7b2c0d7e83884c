#include "moon/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "moon/rng.hpp"
#include "moon/tensor.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace moon {

const char* to_string(Grade g) {
    switch (g) {
        case Grade::G1: return "G1";
        case Grade::G2: return "G2";
        case Grade::G3: return "G3";
    }
    return "?";
}

const char* to_string(Organ o) {
    switch (o) {
        case Organ::Esophagus: return "esophagus";
        case Organ::Liver: return "liver";
        case Organ::Spleen: return "spleen";
    }
    return "?";
}

const char* to_string(Task t) { return t == Task::GeG2 ? ">=G2" : "G3"; }

Grade grade_from_string(const std::string& s) {
    if (s == "G1") return Grade::G1;
    if (s == "G2") return Grade::G2;
    if (s == "G3") return Grade::G3;
    throw ContractError("unknown grade: " + s);
}

Organ organ_from_string(const std::string& s) {
    if (s == "esophagus") return Organ::Esophagus;
    if (s == "liver") return Organ::Liver;
    if (s == "spleen") return Organ::Spleen;
    throw ContractError("unknown organ: " + s);
}

OrdinalTarget ordinal_encode(Grade g) {
    OrdinalTarget t;
    t.t1 = g >= Grade::G2 ? 1 : 0;
    t.t2 = g == Grade::G3 ? 1 : 0;
    return t;
}

int binarize_grade(Grade g, Task task) {
    OrdinalTarget t = ordinal_encode(g);
    return task == Task::GeG2 ? t.t1 : t.t2;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    json j;
    j["version"] = m.version;
    if (m.roi_masked) j["roi_masked"] = true;
    j["cases"] = json::array();
    for (const auto& c : m.cases) {
        json jc;
        jc["id"] = c.id;
        jc["grade"] = to_string(c.grade);
        json vols;
        for (const auto& [organ, p] : c.volumes) vols[to_string(organ)] = p;
        jc["volumes"] = vols;
        if (c.lesion_mask) jc["lesion_mask"] = *c.lesion_mask;
        j["cases"].push_back(std::move(jc));
    }
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("save_manifest: cannot open " + path);
    f << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path, bool check_files) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_manifest: cannot open " + path);
    json j = json::parse(f);
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    check(m.version == 1, "load_manifest: unsupported version " + std::to_string(m.version));
    m.roi_masked = j.value("roi_masked", false);
    fs::path base = fs::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        fs::path fp(p);
        return fp.is_absolute() ? fp.string() : (base / fp).string();
    };
    for (const auto& jc : j.at("cases")) {
        CaseRecord c;
        c.id = jc.at("id").get<std::string>();
        c.grade = grade_from_string(jc.at("grade").get<std::string>());
        const json& vols = jc.at("volumes");
        for (Organ o : {Organ::Esophagus, Organ::Liver, Organ::Spleen}) {
            check(vols.contains(to_string(o)),
                  "load_manifest: case " + c.id + " is missing organ " + to_string(o));
            c.volumes[o] = resolve(vols.at(to_string(o)).get<std::string>());
        }
        if (jc.contains("lesion_mask")) c.lesion_mask = resolve(jc.at("lesion_mask").get<std::string>());
        m.cases.push_back(std::move(c));
    }
    if (check_files) {
        for (const auto& c : m.cases) {
            for (const auto& [organ, p] : c.volumes)
                if (!fs::exists(p))
                    throw std::runtime_error("load_manifest: missing volume file " + p + " (case " + c.id + ")");
            if (c.lesion_mask && !fs::exists(*c.lesion_mask))
                throw std::runtime_error("load_manifest: missing lesion mask " + *c.lesion_mask);
        }
    }
    return m;
}

FoldSplit stratified_kfold(const DatasetManifest& manifest, int k, uint64_t seed) {
    check(k >= 2, "stratified_kfold: k must be >= 2");
    std::map<Grade, std::vector<std::string>> by_grade;
    for (const auto& c : manifest.cases) by_grade[c.grade].push_back(c.id);
    for (const auto& [g, ids] : by_grade)
        if (int(ids.size()) < k)
            throw SplitError(std::string("stratified_kfold: grade ") + to_string(g) + " has " +
                             std::to_string(ids.size()) + " cases, fewer than k=" + std::to_string(k));

    FoldSplit split;
    split.k = k;
    split.seed = seed;
    split.folds.assign(size_t(k), {});
    int cursor = 0;
    for (auto& [g, ids] : by_grade) {
        Rng rng(hash_combine(seed, uint64_t(g)));
        rng.shuffle(ids);
        for (const auto& id : ids) {
            split.folds[size_t(cursor)].push_back(id);
            cursor = (cursor + 1) % k;
        }
    }
    return split;
}

void save_split(const FoldSplit& s, const std::string& path) {
    json j;
    j["k"] = s.k;
    j["seed"] = s.seed;
    j["folds"] = s.folds;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("save_split: cannot open " + path);
    f << j.dump(2) << "\n";
}

FoldSplit load_split(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_split: cannot open " + path);
    json j = json::parse(f);
    FoldSplit s;
    s.k = j.at("k").get<int>();
    s.seed = j.at("seed").get<uint64_t>();
    s.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
    return s;
}

} // namespace moon
