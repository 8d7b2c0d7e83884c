#include "moon/config.hpp"

#include <fstream>

using nlohmann::json;

namespace moon {

static json dims_to_json(Dims3 d) { return json::array({d.h, d.w, d.d}); }
static Dims3 dims_from_json(const json& j) {
    check(j.is_array() && j.size() == 3, "config: expected [h,w,d] triple");
    return Dims3{j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

json default_config_json() { return config_to_json(RunConfig{}); }

json config_to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["jobs"] = c.jobs;
    j["synth"] = {{"seed", c.synth.seed},
                  {"counts", c.synth.counts},
                  {"dims",
                   {{"esophagus", json::array({c.synth.esophagus.h, c.synth.esophagus.w, c.synth.esophagus.d})},
                    {"liver", json::array({c.synth.liver.h, c.synth.liver.w, c.synth.liver.d})},
                    {"spleen", json::array({c.synth.spleen.h, c.synth.spleen.w, c.synth.spleen.d})}}},
                  {"delta_esophagus", c.synth.delta_esophagus},
                  {"delta_liver", c.synth.delta_liver},
                  {"delta_spleen", c.synth.delta_spleen},
                  {"noise_sigma", c.synth.noise_sigma}};
    j["data"] = {{"manifest", c.data_manifest},
                 {"test_manifest", c.test_manifest},
                 {"split_file", c.split_file},
                 {"fold", c.fold},
                 {"val_fraction", c.val_fraction}};
    j["model"] = {{"channels", c.channels}, {"blocks", c.blocks},       {"heads", c.heads},
                  {"mlp_ratio", c.mlp_ratio}, {"ori_grid", dims_to_json(c.ori_grid)},
                  {"use_ori", c.use_ori},   {"use_hfe", c.use_hfe},     {"fusion", c.fusion},
                  {"lowrank_rank", c.lowrank_rank}, {"single_organ", c.single_organ}};
    j["loss"] = {{"lambda", c.train.loss.lambda},
                 {"epsilon", c.train.loss.epsilon},
                 {"cca_min_batch", c.train.loss.cca_min_batch},
                 {"eig_jitter", c.train.loss.eig_jitter},
                 {"use_cca", c.train.loss.use_cca}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"lr", c.train.lr},
                  {"lr_halve_every", c.train.lr_halve_every},
                  {"batch_size", c.train.batch_size},
                  {"clip_norm", c.train.clip_norm},
                  {"weight_decay", c.train.weight_decay},
                  {"warmup_epochs", c.train.warmup_epochs},
                  {"augment",
                   {{"enabled", c.train.augment.enabled},
                    {"spatial_scale", c.train.augment.spatial_scale},
                    {"intensity_scale", c.train.augment.intensity_scale},
                    {"flip_axes", c.train.augment.flip_axes},
                    {"cutout_count", c.train.augment.cutout_count},
                    {"cutout_fraction", c.train.augment.cutout_fraction}}}};
    j["crossval"] = {{"k", c.crossval_k}, {"seeds", c.compare_seeds}};
    j["eval"] = {{"checkpoint", c.eval_checkpoint}};
    j["gradcam"] = {{"checkpoint", c.gradcam_checkpoint},
                    {"organ", c.gradcam_organ},
                    {"task", c.gradcam_task},
                    {"max_cases", c.gradcam_max_cases},
                    {"pgm", c.gradcam_pgm}};
    return j;
}

// every key in `user` must exist in `schema`
static void reject_unknown(const json& schema, const json& user, const std::string& prefix) {
    if (!user.is_object()) return;
    for (auto it = user.begin(); it != user.end(); ++it) {
        std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!schema.is_object() || !schema.contains(it.key()))
            throw ConfigError("config: unknown key '" + path + "'", path);
        reject_unknown(schema.at(it.key()), it.value(), path);
    }
}

static void merge_into(json& base, const json& user) {
    if (!user.is_object()) {
        base = user;
        return;
    }
    for (auto it = user.begin(); it != user.end(); ++it) {
        if (base.contains(it.key()) && base.at(it.key()).is_object() && it.value().is_object())
            merge_into(base.at(it.key()), it.value());
        else
            base[it.key()] = it.value();
    }
}

RunConfig config_from_json(const json& user) {
    json defaults = default_config_json();
    reject_unknown(defaults, user, "");
    json j = defaults;
    merge_into(j, user);

    RunConfig c;
    c.seed = j.at("seed").get<uint64_t>();
    c.jobs = j.at("jobs").get<int>();
    const json& s = j.at("synth");
    c.synth.seed = s.at("seed").get<uint64_t>();
    c.synth.counts = s.at("counts").get<std::array<int, 3>>();
    auto d = [&](const char* organ) {
        const json& a = s.at("dims").at(organ);
        return OrganDims{a[0].get<int>(), a[1].get<int>(), a[2].get<int>()};
    };
    c.synth.esophagus = d("esophagus");
    c.synth.liver = d("liver");
    c.synth.spleen = d("spleen");
    c.synth.delta_esophagus = s.at("delta_esophagus").get<double>();
    c.synth.delta_liver = s.at("delta_liver").get<double>();
    c.synth.delta_spleen = s.at("delta_spleen").get<double>();
    c.synth.noise_sigma = s.at("noise_sigma").get<double>();

    const json& dj = j.at("data");
    c.data_manifest = dj.at("manifest").get<std::string>();
    c.test_manifest = dj.at("test_manifest").get<std::string>();
    c.split_file = dj.at("split_file").get<std::string>();
    c.fold = dj.at("fold").get<int>();
    c.val_fraction = dj.at("val_fraction").get<double>();

    const json& m = j.at("model");
    c.channels = m.at("channels").get<std::array<int, 4>>();
    c.blocks = m.at("blocks").get<std::array<int, 4>>();
    c.heads = m.at("heads").get<int>();
    c.mlp_ratio = m.at("mlp_ratio").get<int>();
    c.ori_grid = dims_from_json(m.at("ori_grid"));
    c.use_ori = m.at("use_ori").get<bool>();
    c.use_hfe = m.at("use_hfe").get<bool>();
    c.fusion = m.at("fusion").get<std::string>();
    fusion_from_string(c.fusion); // validate
    c.lowrank_rank = m.at("lowrank_rank").get<int>();
    c.single_organ = m.at("single_organ").get<std::string>();
    if (!c.single_organ.empty()) organ_from_string(c.single_organ);

    const json& l = j.at("loss");
    c.train.loss.lambda = l.at("lambda").get<double>();
    c.train.loss.epsilon = l.at("epsilon").get<double>();
    c.train.loss.cca_min_batch = l.at("cca_min_batch").get<int>();
    c.train.loss.eig_jitter = l.at("eig_jitter").get<double>();
    c.train.loss.use_cca = l.at("use_cca").get<bool>();

    const json& t = j.at("train");
    c.train.epochs = t.at("epochs").get<int>();
    c.train.lr = t.at("lr").get<double>();
    c.train.lr_halve_every = t.at("lr_halve_every").get<int>();
    c.train.batch_size = t.at("batch_size").get<int>();
    c.train.clip_norm = t.at("clip_norm").get<double>();
    c.train.weight_decay = t.at("weight_decay").get<double>();
    c.train.warmup_epochs = t.at("warmup_epochs").get<int>();
    const json& a = t.at("augment");
    c.train.augment.enabled = a.at("enabled").get<bool>();
    c.train.augment.spatial_scale = a.at("spatial_scale").get<double>();
    c.train.augment.intensity_scale = a.at("intensity_scale").get<double>();
    c.train.augment.flip_axes = a.at("flip_axes").get<std::array<bool, 3>>();
    c.train.augment.cutout_count = a.at("cutout_count").get<int>();
    c.train.augment.cutout_fraction = a.at("cutout_fraction").get<double>();
    c.train.seed = c.seed;

    c.crossval_k = j.at("crossval").at("k").get<int>();
    c.compare_seeds = j.at("crossval").at("seeds").get<std::vector<uint64_t>>();
    c.eval_checkpoint = j.at("eval").at("checkpoint").get<std::string>();

    const json& g = j.at("gradcam");
    c.gradcam_checkpoint = g.at("checkpoint").get<std::string>();
    c.gradcam_organ = g.at("organ").get<std::string>();
    c.gradcam_task = g.at("task").get<std::string>();
    c.gradcam_max_cases = g.at("max_cases").get<int>();
    c.gradcam_pgm = g.at("pgm").get<bool>();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    return config_from_json(json::parse(f));
}

void apply_override(json& j, const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("config: override must be key=value, got '" + assignment + "'", assignment);
    std::string key = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (...) {
        parsed = value; // bare strings are allowed
    }
    json* at = &j;
    size_t start = 0;
    while (true) {
        size_t dot = key.find('.', start);
        std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("config: empty key segment in '" + key + "'", key);
        if (dot == std::string::npos) {
            (*at)[part] = parsed;
            return;
        }
        at = &(*at)[part];
        start = dot + 1;
    }
}

ModelConfig RunConfig::model_config(const std::array<Dims3, 3>& roi_dims) const {
    ModelConfig mc;
    mc.channels = channels;
    mc.blocks = blocks;
    mc.heads = heads;
    mc.mlp_ratio = mlp_ratio;
    mc.roi_dims = roi_dims;
    mc.ori_grid = ori_grid;
    mc.use_ori = use_ori;
    mc.use_hfe = use_hfe;
    mc.fusion = fusion_from_string(fusion);
    mc.lowrank_rank = lowrank_rank;
    mc.single_organ = single_organ.empty() ? -1 : int(organ_from_string(single_organ));
    mc.init_seed = seed;
    return mc;
}

} // namespace moon
