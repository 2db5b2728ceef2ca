#pragma once

#include <map>
#include <string>

#include "dynmask/attention.hpp"
#include "dynmask/core.hpp"
#include "dynmask/decoding.hpp"
#include "dynmask/masking.hpp"
#include "dynmask/tokenizer.hpp"

namespace dynmask::io {

// %.17g, exact double round-trip
std::string fmt_double(double x);

Mat read_csv_matrix(const std::string& path);
void write_csv_matrix(const std::string& path, const Mat& m);

// .csv (T rows x D cols) or .jsonl ("frames" field of the first line)
MotionSequence load_motion(const std::string& path);

struct CorpusEntry {
    MotionSequence motion;
    std::vector<int> labels;          // empty when absent
    std::vector<double> condition;    // empty when absent
};

// Every line of a .jsonl corpus: {"frames": [[...]], "labels": [...], "condition": [...]}
std::vector<CorpusEntry> load_jsonl(const std::string& path);

// All *.csv and *.jsonl files in a directory, sorted by name.
std::vector<CorpusEntry> load_corpus_dir(const std::string& dir);

Codebook load_codebook(const std::string& path);
void save_codebook(const std::string& path, const Codebook& cb);

TextCondition load_condition(const std::string& path);

struct Checkpoint {
    ToyModel model;
    Codebook codebook;
};

// JSON manifest (shapes, hyperparameters, format version) plus a raw
// little-endian float64 blob next to it.
void save_checkpoint(const std::string& json_path, const ToyModel& model, const Codebook& cb);
Checkpoint load_checkpoint(const std::string& json_path);

void write_trace_jsonl(const std::string& path, const DecodeTrace& trace);

std::uint64_t fnv1a64_file(const std::string& path);

// Run manifest: command, resolved config, input digests, seed, format version.
void write_manifest(const std::string& path, const std::string& command, const Config& cfg,
                    const std::map<std::string, std::string>& input_files);

// key=value per line, '#' comments, blank lines ignored
std::map<std::string, std::string> read_config_file(const std::string& path);

}  // namespace dynmask::io
