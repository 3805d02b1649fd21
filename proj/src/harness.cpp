#include "sdc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/core.h>

namespace sdc {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, long t,
               const AdamConfig& cfg) {
    if (params.size() != grads.size())
        throw ShapeError(fmt::format("adam_step: {} params vs {} grads", params.size(),
                                     grads.size()));
    if (t < 1) throw DomainError("adam_step: t must be >= 1");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size())
        throw ShapeError("adam_step: state size does not match parameters");

    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        if (!std::isfinite(g)) throw DomainError("adam_step: non-finite gradient");
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

// --- DensitySchedule -------------------------------------------------------------

void DensitySchedule::validate() const {
    if (kind == Kind::Fixed) {
        if (!(fixed > 0.0 && fixed <= 1.0))
            throw ConfigError(fmt::format("fixed density must lie in (0, 1], got {}", fixed));
    } else {
        if (!(low >= 0.0 && low < high && high <= 1.0))
            throw ConfigError(
                fmt::format("density range ({}, {}] must satisfy 0 <= low < high <= 1", low,
                            high));
    }
}

double DensitySchedule::sample(Rng& rng) const {
    if (kind == Kind::Fixed) return fixed;
    // Uniform on (low, high]: flip the half-open [0,1) draw.
    return high - (high - low) * rng.uniform01();
}

DensitySchedule DensitySchedule::parse(const std::string& text) {
    DensitySchedule s;
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ':')) parts.push_back(tok);
    try {
        if (parts.size() == 2 && parts[0] == "fixed") {
            s.kind = Kind::Fixed;
            s.fixed = std::stod(parts[1]);
        } else if (parts.size() == 3 && parts[0] == "uniform") {
            s.kind = Kind::UniformRandom;
            s.low = std::stod(parts[1]);
            s.high = std::stod(parts[2]);
        } else {
            throw ConfigError("");
        }
    } catch (const std::exception&) {
        throw ConfigError(fmt::format(
            "density schedule '{}' is neither fixed:D nor uniform:LOW:HIGH", text));
    }
    s.validate();
    return s;
}

std::string DensitySchedule::serialize() const {
    return kind == Kind::Fixed ? fmt::format("fixed:{:g}", fixed)
                               : fmt::format("uniform:{:g}:{:g}", low, high);
}

// --- TrainConfig -----------------------------------------------------------------

const char* to_string(InputConfig v) {
    switch (v) {
        case InputConfig::Sd: return "sd";
        case InputConfig::Rgb: return "rgb";
        case InputConfig::EarlyFusion: return "rgbsd-early";
        case InputConfig::LateFusion: return "rgbsd-late";
    }
    return "?";
}

const char* to_string(TaskKind v) { return v == TaskKind::Depth ? "depth" : "seg"; }

const char* to_string(FirstLayer v) {
    switch (v) {
        case FirstLayer::SparseConv: return "sparse";
        case FirstLayer::DenseConv: return "dense";
        case FirstLayer::DenseWithMask: return "dense-maskch";
    }
    return "?";
}

namespace {

InputConfig parse_inputs(const std::string& s) {
    if (s == "sd") return InputConfig::Sd;
    if (s == "rgb") return InputConfig::Rgb;
    if (s == "rgbsd-early") return InputConfig::EarlyFusion;
    if (s == "rgbsd-late") return InputConfig::LateFusion;
    throw ConfigError(fmt::format("unknown inputs '{}' (sd|rgb|rgbsd-early|rgbsd-late)", s));
}

TaskKind parse_task(const std::string& s) {
    if (s == "depth") return TaskKind::Depth;
    if (s == "seg") return TaskKind::Segmentation;
    throw ConfigError(fmt::format("unknown task '{}' (depth|seg)", s));
}

FirstLayer parse_first_layer(const std::string& s) {
    if (s == "sparse") return FirstLayer::SparseConv;
    if (s == "dense") return FirstLayer::DenseConv;
    if (s == "dense-maskch") return FirstLayer::DenseWithMask;
    throw ConfigError(fmt::format("unknown first_layer '{}' (sparse|dense|dense-maskch)", s));
}

LossNorm parse_loss(const std::string& s) {
    if (s == "l1") return LossNorm::L1;
    if (s == "l2") return LossNorm::L2;
    throw ConfigError(fmt::format("unknown loss '{}' (l1|l2)", s));
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(fmt::format("bad boolean '{}'", s));
}

std::map<std::string, std::string, std::less<>> read_kv(std::istream& in) {
    std::map<std::string, std::string, std::less<>> kv;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(fmt::format("config line '{}' is not key=value", line));
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

}  // namespace

void TrainConfig::validate() const {
    if (arch != "tiny-ed") throw ConfigError(fmt::format("unknown architecture '{}'", arch));
    density.validate();
    if (!cutout.empty()) {
        const SparsityPattern p = SparsityPattern::parse_compact(cutout);
        if (p.kind != SparsityPattern::Kind::CutOut)
            throw ConfigError("cutout option must use the cutout:... pattern");
    }
    if (epochs < 1 || steps_per_epoch < 1 || batch < 1)
        throw ConfigError("epochs, steps_per_epoch and batch must be >= 1");
    if (!(lr > 0.0) || !(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0) ||
        !(eps_adam > 0.0))
        throw ConfigError("optimizer hyperparameters out of range");
    if (!(d_max > 0.0)) throw ConfigError("d_max must be > 0");
    if (scene_height < 32 || scene_width < 32)
        throw ConfigError("scene dimensions must be >= 32");
    if (scene_height % 8 != 0 || scene_width % 8 != 0)
        throw ConfigError("tiny-ed needs scene dimensions divisible by 8");
    if (num_classes < 2 || num_classes > 16)
        throw ConfigError("num_classes must lie in [2, 16]");
    if (eval_scenes < 1) throw ConfigError("eval_scenes must be >= 1");
    if (val_interval < 0) throw ConfigError("val_interval must be >= 0");
    if (task == TaskKind::Segmentation && inputs == InputConfig::Rgb)
        return;  // rgb-only segmentation is fine
}

TrainConfig TrainConfig::parse(std::istream& in) {
    auto kv = read_kv(in);
    TrainConfig cfg;
    auto take = [&](const char* key, auto setter) {
        auto it = kv.find(key);
        if (it != kv.end()) {
            setter(it->second);
            kv.erase(it);
        }
    };

    try {
        take("arch", [&](const std::string& v) { cfg.arch = v; });
        take("task", [&](const std::string& v) { cfg.task = parse_task(v); });
        take("inputs", [&](const std::string& v) { cfg.inputs = parse_inputs(v); });
        take("first_layer", [&](const std::string& v) { cfg.first_layer = parse_first_layer(v); });
        take("loss", [&](const std::string& v) { cfg.loss = parse_loss(v); });
        take("density", [&](const std::string& v) { cfg.density = DensitySchedule::parse(v); });
        take("cutout", [&](const std::string& v) { cfg.cutout = v == "none" ? "" : v; });
        take("epochs", [&](const std::string& v) { cfg.epochs = std::stoi(v); });
        take("steps_per_epoch", [&](const std::string& v) { cfg.steps_per_epoch = std::stoi(v); });
        take("batch", [&](const std::string& v) { cfg.batch = std::stoi(v); });
        take("lr", [&](const std::string& v) { cfg.lr = std::stod(v); });
        take("beta1", [&](const std::string& v) { cfg.beta1 = std::stod(v); });
        take("beta2", [&](const std::string& v) { cfg.beta2 = std::stod(v); });
        take("eps_adam", [&](const std::string& v) { cfg.eps_adam = std::stod(v); });
        take("seed", [&](const std::string& v) { cfg.seed = std::stoull(v); });
        take("d_max", [&](const std::string& v) { cfg.d_max = std::stod(v); });
        take("batchnorm", [&](const std::string& v) { cfg.batchnorm = parse_bool(v); });
        take("scene_height", [&](const std::string& v) { cfg.scene_height = std::stoi(v); });
        take("scene_width", [&](const std::string& v) { cfg.scene_width = std::stoi(v); });
        take("num_classes", [&](const std::string& v) { cfg.num_classes = std::stoi(v); });
        take("eval_scenes", [&](const std::string& v) { cfg.eval_scenes = std::stoi(v); });
        take("val_interval", [&](const std::string& v) { cfg.val_interval = std::stoi(v); });
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(fmt::format("bad config value: {}", e.what()));
    }

    if (!kv.empty())
        throw ConfigError(fmt::format("unknown config key '{}'", kv.begin()->first));
    cfg.validate();
    return cfg;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open config {}", path.string()));
    return parse(in);
}

std::string TrainConfig::serialize() const {
    return fmt::format(
        "arch={}\ntask={}\ninputs={}\nfirst_layer={}\nloss={}\ndensity={}\ncutout={}\n"
        "epochs={}\nsteps_per_epoch={}\nbatch={}\nlr={:g}\nbeta1={:g}\nbeta2={:g}\n"
        "eps_adam={:g}\nseed={}\nd_max={:g}\nbatchnorm={}\nscene_height={}\nscene_width={}\n"
        "num_classes={}\neval_scenes={}\nval_interval={}\n",
        arch, to_string(task), to_string(inputs), to_string(first_layer),
        loss == LossNorm::L1 ? "l1" : "l2", density.serialize(), cutout.empty() ? "none" : cutout,
        epochs, steps_per_epoch, batch, lr, beta1, beta2, eps_adam, seed, d_max,
        batchnorm ? "true" : "false", scene_height, scene_width, num_classes, eval_scenes,
        val_interval);
}

// --- Scene sources ----------------------------------------------------------------

SyntheticScene GeneratedScenes::scene(long index) const {
    return generate_scene(Rng::mix(seed_, static_cast<std::uint64_t>(index)), height_, width_,
                          num_classes_);
}

DirectoryScenes::DirectoryScenes(const std::filesystem::path& dir, int num_classes)
    : num_classes_(num_classes) {
    if (!std::filesystem::is_directory(dir))
        throw IoError(fmt::format("{} is not a directory", dir.string()));
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        const std::string suffix = "_depth.png";
        if (name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
            auto stem = entry.path();
            stem.replace_filename(name.substr(0, name.size() - suffix.size()));
            stems_.push_back(stem);
        }
    }
    std::sort(stems_.begin(), stems_.end());
    if (stems_.empty())
        throw IoError(fmt::format("no *_depth.png scenes found in {}", dir.string()));
}

SyntheticScene DirectoryScenes::scene(long index) const {
    const auto& stem = stems_[static_cast<std::size_t>(index) % stems_.size()];
    SyntheticScene s;
    s.depth = load_depth_png(stem.string() + "_depth.png");
    const auto rgb_path = stem.string() + "_rgb.png";
    if (std::filesystem::exists(rgb_path)) {
        s.rgb = load_rgb(rgb_path);
    } else {
        s.rgb = RgbImage(s.depth.height(), s.depth.width());
    }
    const auto labels_path = stem.string() + "_labels.png";
    if (std::filesystem::exists(labels_path)) {
        s.labels = load_seg(labels_path);
        int max_id = -1;
        for (int r = 0; r < s.labels.height(); ++r)
            for (int c = 0; c < s.labels.width(); ++c)
                if (!s.labels.ignored(r, c)) max_id = std::max(max_id, int(s.labels.at(r, c)));
        s.num_classes = num_classes_ > 0 ? num_classes_ : max_id + 1;
    } else {
        s.labels = SegMap(s.depth.height(), s.depth.width(), kIgnoreLabel);
        s.num_classes = num_classes_;
    }
    return s;
}

// --- ArchDescriptor ----------------------------------------------------------------

ArchDescriptor ArchDescriptor::from_config(const TrainConfig& cfg) {
    ArchDescriptor a;
    a.arch = cfg.arch;
    a.task = cfg.task;
    a.inputs = cfg.inputs;
    a.first_layer = cfg.first_layer;
    a.batchnorm = cfg.batchnorm;
    a.num_classes = cfg.num_classes;
    a.d_max = cfg.d_max;
    return a;
}

NetworkGraph ArchDescriptor::build(std::uint64_t init_seed) const {
    if (arch != "tiny-ed") throw ConfigError(fmt::format("unknown architecture '{}'", arch));
    const Head head = task == TaskKind::Depth ? Head{HeadKind::Regression, 0}
                                              : Head{HeadKind::Softmax, num_classes};
    BranchSpec depth_branch{channels, first_layer, batchnorm};
    BranchSpec rgb_branch{channels, FirstLayer::DenseConv, batchnorm};

    switch (inputs) {
        case InputConfig::Sd:
            return build_network(SingleBranch{Slot::SparseDepth, depth_branch}, head, init_seed);
        case InputConfig::Rgb:
            return build_network(SingleBranch{Slot::Rgb, rgb_branch}, head, init_seed);
        case InputConfig::EarlyFusion:
            return build_network(FusionTemplate{FusionMode::Early, rgb_branch, depth_branch, 64},
                                 head, init_seed);
        case InputConfig::LateFusion:
            return build_network(FusionTemplate{FusionMode::Late, rgb_branch, depth_branch, 64},
                                 head, init_seed);
    }
    throw ConfigError("unreachable input config");
}

std::string ArchDescriptor::serialize() const {
    return fmt::format(
        "arch={}\ntask={}\ninputs={}\nfirst_layer={}\nchannels={},{},{}\nbatchnorm={}\n"
        "num_classes={}\nd_max={:.17g}\n",
        arch, to_string(task), to_string(inputs), to_string(first_layer), channels[0], channels[1],
        channels[2], batchnorm ? "true" : "false", num_classes, d_max);
}

ArchDescriptor ArchDescriptor::parse(const std::string& text) {
    std::istringstream in(text);
    auto kv = read_kv(in);
    ArchDescriptor a;
    auto need = [&](const char* key) {
        auto it = kv.find(key);
        if (it == kv.end())
            throw ConfigError(fmt::format("architecture descriptor misses '{}'", key));
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    a.arch = need("arch");
    a.task = parse_task(need("task"));
    a.inputs = parse_inputs(need("inputs"));
    a.first_layer = parse_first_layer(need("first_layer"));
    const std::string ch = need("channels");
    if (std::sscanf(ch.c_str(), "%d,%d,%d", &a.channels[0], &a.channels[1], &a.channels[2]) != 3)
        throw ConfigError(fmt::format("bad channels spec '{}'", ch));
    a.batchnorm = parse_bool(need("batchnorm"));
    a.num_classes = std::stoi(need("num_classes"));
    a.d_max = std::stod(need("d_max"));
    if (!kv.empty())
        throw ConfigError(fmt::format("unknown architecture key '{}'", kv.begin()->first));
    return a;
}

}  // namespace sdc
