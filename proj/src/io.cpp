#include "dynmask/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace dynmask::io {

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

namespace {

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    return out;
}

double parse_csv_double(const std::string& cell, const std::string& path, int line) {
    double out = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last) {
        throw Error(ErrorCode::FormatError,
                    path + ":" + std::to_string(line) + ": bad number '" + cell + "'");
    }
    return out;
}

std::vector<double> parse_csv_row(const std::string& row, const std::string& path, int line) {
    std::vector<double> out;
    size_t start = 0;
    while (start <= row.size()) {
        size_t pos = row.find(',', start);
        std::string cell =
            (pos == std::string::npos) ? row.substr(start) : row.substr(start, pos - start);
        // trim
        size_t a = cell.find_first_not_of(" \t\r");
        size_t b = cell.find_last_not_of(" \t\r");
        cell = (a == std::string::npos) ? "" : cell.substr(a, b - a + 1);
        out.push_back(parse_csv_double(cell, path, line));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

MotionSequence entry_to_motion(const json& j, const std::string& path, int line) {
    if (!j.contains("frames") || !j["frames"].is_array() || j["frames"].empty()) {
        throw Error(ErrorCode::FormatError,
                    path + ":" + std::to_string(line) + ": missing 'frames' array");
    }
    const auto& frames = j["frames"];
    const int T = static_cast<int>(frames.size());
    const int D = static_cast<int>(frames[0].size());
    Mat m(T, D);
    for (int t = 0; t < T; ++t) {
        if (static_cast<int>(frames[t].size()) != D) {
            throw Error(ErrorCode::FormatError,
                        path + ":" + std::to_string(line) + ": ragged frame rows");
        }
        for (int d = 0; d < D; ++d) m(t, d) = frames[t][d].get<double>();
    }
    return MotionSequence(std::move(m), BoolVec(T, 1));
}

}  // namespace

Mat read_csv_matrix(const std::string& path) {
    std::ifstream in = open_in(path);
    std::vector<std::vector<double>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        if (line.empty() || line[0] == '#') continue;
        rows.push_back(parse_csv_row(line, path, lineno));
    }
    if (rows.empty()) throw Error(ErrorCode::FormatError, path + ": empty matrix");
    const int cols = static_cast<int>(rows[0].size());
    Mat m(static_cast<int>(rows.size()), cols);
    for (size_t r = 0; r < rows.size(); ++r) {
        if (static_cast<int>(rows[r].size()) != cols) {
            throw Error(ErrorCode::FormatError,
                        path + ":" + std::to_string(r + 1) + ": ragged row");
        }
        for (int c = 0; c < cols; ++c) m(static_cast<int>(r), c) = rows[r][c];
    }
    return m;
}

void write_csv_matrix(const std::string& path, const Mat& m) {
    std::ofstream out = open_out(path);
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
            if (c) out << ',';
            out << fmt_double(m(r, c));
        }
        out << '\n';
    }
}

MotionSequence load_motion(const std::string& path) {
    if (path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl") {
        auto entries = load_jsonl(path);
        if (entries.empty()) throw Error(ErrorCode::FormatError, path + ": empty corpus");
        return entries.front().motion;
    }
    Mat m = read_csv_matrix(path);
    const int T = m.rows;
    return MotionSequence(std::move(m), BoolVec(T, 1));
}

std::vector<CorpusEntry> load_jsonl(const std::string& path) {
    std::ifstream in = open_in(path);
    std::vector<CorpusEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw Error(ErrorCode::FormatError, path + ":" + std::to_string(lineno) + ": bad JSON");
        }
        CorpusEntry entry;
        entry.motion = entry_to_motion(j, path, lineno);
        if (j.contains("labels")) entry.labels = j["labels"].get<std::vector<int>>();
        if (j.contains("condition")) entry.condition = j["condition"].get<std::vector<double>>();
        out.push_back(std::move(entry));
    }
    return out;
}

std::vector<CorpusEntry> load_corpus_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, dir + " is not a directory");
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        if (ext == ".csv" || ext == ".jsonl") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    std::vector<CorpusEntry> out;
    for (const auto& f : files) {
        if (f.size() >= 6 && f.substr(f.size() - 6) == ".jsonl") {
            auto entries = load_jsonl(f);
            for (auto& e : entries) out.push_back(std::move(e));
        } else {
            CorpusEntry e;
            e.motion = load_motion(f);
            out.push_back(std::move(e));
        }
    }
    if (out.empty()) throw Error(ErrorCode::IoError, dir + ": no corpus files");
    return out;
}

Codebook load_codebook(const std::string& path) { return Codebook(read_csv_matrix(path)); }

void save_codebook(const std::string& path, const Codebook& cb) {
    write_csv_matrix(path, cb.entries);
}

TextCondition load_condition(const std::string& path) {
    Mat m = read_csv_matrix(path);
    if (m.rows != 1) {
        throw Error(ErrorCode::FormatError, path + ": condition must be a single CSV row");
    }
    return TextCondition(std::move(m.v));
}

// ---------------------------------------------------------------------------
// Checkpoint

void save_checkpoint(const std::string& json_path, const ToyModel& model, const Codebook& cb) {
    fs::path jp(json_path);
    fs::path bp = jp;
    bp.replace_extension(".bin");

    json manifest;
    manifest["format_version"] = 1;
    manifest["model"] = {{"vocab", model.vocab},   {"dim", model.dim},
                         {"heads", model.heads},   {"layers", model.layer_count},
                         {"t_max", model.t_max},   {"cond_dim", model.cond_dim}};
    manifest["bin"] = bp.filename().string();

    std::ofstream bin(bp, std::ios::binary);
    if (!bin) throw Error(ErrorCode::IoError, "cannot write " + bp.string());

    ToyModel& m = const_cast<ToyModel&>(model);
    json tensors = json::array();
    std::uint64_t offset = 0;
    for (auto& view : param_views(m)) {
        tensors.push_back({{"name", view.name},
                           {"rows", view.rows},
                           {"cols", view.cols},
                           {"offset", offset}});
        bin.write(reinterpret_cast<const char*>(view.data),
                  static_cast<std::streamsize>(view.size * sizeof(double)));
        offset += view.size;
    }
    tensors.push_back({{"name", "codebook"},
                       {"rows", cb.entries.rows},
                       {"cols", cb.entries.cols},
                       {"offset", offset}});
    bin.write(reinterpret_cast<const char*>(cb.entries.v.data()),
              static_cast<std::streamsize>(cb.entries.v.size() * sizeof(double)));
    manifest["tensors"] = tensors;

    std::ofstream out = open_out(json_path);
    out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::string& json_path) {
    std::ifstream in = open_in(json_path);
    json manifest = json::parse(in, nullptr, false);
    if (manifest.is_discarded()) {
        throw Error(ErrorCode::FormatError, json_path + ": bad JSON manifest");
    }
    if (!manifest.contains("format_version") || manifest["format_version"].get<int>() != 1) {
        throw Error(ErrorCode::FormatError, json_path + ": unsupported format version");
    }

    const auto& ms = manifest["model"];
    ToyModel model = ToyModel::with_shape(ms["vocab"].get<int>(), ms["dim"].get<int>(),
                                          ms["heads"].get<int>(), ms["layers"].get<int>(),
                                          ms["t_max"].get<int>(), ms["cond_dim"].get<int>());

    fs::path bp = fs::path(json_path).parent_path() / manifest["bin"].get<std::string>();
    std::ifstream bin(bp, std::ios::binary);
    if (!bin) throw Error(ErrorCode::IoError, "cannot open " + bp.string());

    auto views = param_views(model);
    std::map<std::string, ParamView*> by_name;
    for (auto& v : views) by_name[v.name] = &v;

    Mat codebook_mat;
    for (const auto& t : manifest["tensors"]) {
        const std::string name = t["name"].get<std::string>();
        const int rows = t["rows"].get<int>();
        const int cols = t["cols"].get<int>();
        const std::uint64_t offset = t["offset"].get<std::uint64_t>();
        const size_t count = static_cast<size_t>(rows) * cols;
        bin.seekg(static_cast<std::streamoff>(offset * sizeof(double)));
        if (name == "codebook") {
            codebook_mat = Mat(rows, cols);
            bin.read(reinterpret_cast<char*>(codebook_mat.v.data()),
                     static_cast<std::streamsize>(count * sizeof(double)));
        } else {
            auto it = by_name.find(name);
            if (it == by_name.end()) {
                throw Error(ErrorCode::FormatError, json_path + ": unknown tensor " + name);
            }
            if (it->second->size != count) {
                throw Error(ErrorCode::FormatError, json_path + ": shape mismatch for " + name);
            }
            bin.read(reinterpret_cast<char*>(it->second->data),
                     static_cast<std::streamsize>(count * sizeof(double)));
        }
        if (!bin) throw Error(ErrorCode::FormatError, bp.string() + ": truncated blob");
    }
    if (codebook_mat.rows == 0) {
        throw Error(ErrorCode::FormatError, json_path + ": missing codebook tensor");
    }
    return Checkpoint{std::move(model), Codebook(std::move(codebook_mat))};
}

void write_trace_jsonl(const std::string& path, const DecodeTrace& trace) {
    std::ofstream out = open_out(path);
    for (const auto& step : trace.steps) {
        json j;
        j["step"] = step.step;
        j["frozen_positions"] = step.newly_frozen;
        j["b"] = step.b;
        j["T"] = step.temps;
        j["sigma"] = step.sigmas;
        j["tokens"] = step.tokens;
        j["confidences"] = step.confidences;
        out << j.dump() << '\n';
    }
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    return h;
}

void write_manifest(const std::string& path, const std::string& command, const Config& cfg,
                    const std::map<std::string, std::string>& input_files) {
    json j;
    j["command"] = command;
    j["format_version"] = 1;
    j["seed"] = cfg.seed;
    json conf;
    for (const auto& [k, v] : config_to_map(cfg)) conf[k] = v;
    j["config"] = conf;
    json inputs;
    for (const auto& [name, p] : input_files) {
        char hex[20];
        std::snprintf(hex, sizeof(hex), "%016llx",
                      static_cast<unsigned long long>(fnv1a64_file(p)));
        inputs[name] = std::string("fnv1a64:") + hex;
    }
    j["inputs"] = inputs;
    std::ofstream out = open_out(path);
    out << j.dump(2) << '\n';
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream in = open_in(path);
    std::map<std::string, std::string> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        size_t a = line.find_first_not_of(" \t\r");
        if (a == std::string::npos) continue;
        size_t b = line.find_last_not_of(" \t\r");
        line = line.substr(a, b - a + 1);
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::FormatError,
                        path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        auto trim = [](std::string s) {
            size_t x = s.find_first_not_of(" \t");
            size_t y = s.find_last_not_of(" \t");
            return (x == std::string::npos) ? std::string() : s.substr(x, y - x + 1);
        };
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

}  // namespace dynmask::io
