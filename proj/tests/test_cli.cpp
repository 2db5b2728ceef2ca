#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dynmask/cli.hpp"
#include "dynmask/io.hpp"
#include "dynmask/reference.hpp"
#include "test_util.hpp"

using namespace dynmask;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("dynmask_test_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& name = "") const {
        return name.empty() ? path.string() : (path / name).string();
    }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

struct CaptureStream {
    std::ostream& stream;
    std::ostringstream buffer;
    std::streambuf* saved;
    explicit CaptureStream(std::ostream& s) : stream(s) { saved = s.rdbuf(buffer.rdbuf()); }
    ~CaptureStream() { stream.rdbuf(saved); }
    std::string text() const { return buffer.str(); }
};

// rows of one column from a small csv with header
std::vector<std::vector<std::string>> read_csv_rows(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        size_t start = 0;
        while (start <= line.size()) {
            size_t pos = line.find(',', start);
            cells.push_back(pos == std::string::npos ? line.substr(start)
                                                     : line.substr(start, pos - start));
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
        rows.push_back(cells);
    }
    return rows;
}

}  // namespace

TEST_CASE("cli analyze static synth gives zero omega") {
    TempDir dir("analyze_static");
    CaptureStream cout_cap(std::cout);
    int code = cli::run({"analyze", "--synth", "static,T=16,D=3", "--out", dir.str()});
    REQUIRE(code == 0);
    auto rows = read_csv_rows(dir.str("msd.csv"));
    CHECK(rows[0][0] == "t");
    CHECK(rows.size() == 17);
    for (size_t r = 1; r < rows.size(); ++r) CHECK(std::stod(rows[r][1]) == 0.0);
}

TEST_CASE("cli analyze composite separates noise from static") {
    TempDir dir("analyze_comp");
    int code = cli::run({"analyze", "--synth", "composite(static:16|noise:16),D=3", "--out",
                         dir.str(), "--similarity"});
    REQUIRE(code == 0);
    auto rows = read_csv_rows(dir.str("msd.csv"));
    double static_mean = 0.0, noise_mean = 0.0;
    for (int t = 0; t < 16; ++t) static_mean += std::stod(rows[1 + t][1]);
    for (int t = 16; t < 32; ++t) noise_mean += std::stod(rows[1 + t][1]);
    CHECK(noise_mean / 16 > static_mean / 16);
    CHECK(fs::exists(dir.str("similarity.csv")));
    CHECK(fs::exists(dir.str("manifest.json")));
}

TEST_CASE("cli analyze missing input file exits 3 and names the path") {
    TempDir dir("analyze_missing");
    CaptureStream cerr_cap(std::cerr);
    int code = cli::run({"analyze", "--motion", dir.str("absent.csv"), "--out", dir.str()});
    CHECK(code == 3);
    CHECK(cerr_cap.text().find("absent.csv") != std::string::npos);
}

TEST_CASE("cli analyze does not mutate its input") {
    TempDir dir("analyze_nomut");
    spit(dir.str("motion.csv"), "0,0\n1,1\n2,2\n3,3\n");
    auto before = io::fnv1a64_file(dir.str("motion.csv"));
    REQUIRE(cli::run({"analyze", "--motion", dir.str("motion.csv"), "--out", dir.str()}) == 0);
    CHECK(io::fnv1a64_file(dir.str("motion.csv")) == before);
}

TEST_CASE("cli maskplan endpoints and reproducibility") {
    TempDir dir("maskplan");
    spit(dir.str("cond.csv"), "1,0,0\n");

    {
        CaptureStream cout_cap(std::cout);
        REQUIRE(cli::run({"maskplan", "--synth", "noise,T=12,D=3", "--condition", dir.str("cond.csv"),
                          "--r", "1", "--out", dir.str()}) == 0);
        CHECK(cout_cap.text() == "selected 0\n");
    }
    auto rows = read_csv_rows(dir.str("maskplan.csv"));
    CHECK(rows.size() == 13);
    for (size_t r = 1; r < rows.size(); ++r) CHECK(rows[r][1] == "0");

    {
        CaptureStream cout_cap(std::cout);
        REQUIRE(cli::run({"maskplan", "--synth", "noise,T=12,D=3", "--condition", dir.str("cond.csv"),
                          "--K", "12", "--out", dir.str()}) == 0);
        CHECK(cout_cap.text() == "selected 12\n");
    }
    rows = read_csv_rows(dir.str("maskplan.csv"));
    for (size_t r = 1; r < rows.size(); ++r) CHECK(rows[r][1] == "1");
    std::string first = slurp(dir.str("maskplan.csv"));
    std::string first_manifest = slurp(dir.str("manifest.json"));

    {
        CaptureStream cout_cap(std::cout);
        REQUIRE(cli::run({"maskplan", "--synth", "noise,T=12,D=3", "--condition", dir.str("cond.csv"),
                          "--K", "12", "--out", dir.str()}) == 0);
    }
    CHECK(slurp(dir.str("maskplan.csv")) == first);
    CHECK(slurp(dir.str("manifest.json")) == first_manifest);
}

TEST_CASE("cli maskplan flag and dimension errors exit 2") {
    TempDir dir("maskplan_err");
    spit(dir.str("cond.csv"), "1,0\n");  // dim 2, motion dim 3
    CaptureStream cerr_cap(std::cerr);
    CHECK(cli::run({"maskplan", "--synth", "noise,T=12,D=3", "--condition", dir.str("cond.csv"),
                    "--K", "3", "--r", "0.5", "--out", dir.str()}) == 2);
    CHECK(cli::run({"maskplan", "--synth", "noise,T=12,D=3", "--condition", dir.str("cond.csv"),
                    "--out", dir.str()}) == 2);
    CHECK(cli::run({"maskplan", "--synth", "noise,T=12,D=3", "--condition", dir.str("cond.csv"),
                    "--K", "3", "--out", dir.str()}) == 2);
}

TEST_CASE("cli train produces a decreasing loss curve and deterministic artifacts") {
    TempDir dir("train");
    CaptureStream cout_cap(std::cout);
    REQUIRE(cli::run({"train", "--epochs", "8", "--seed", "3", "--out", dir.str()}) == 0);
    auto rows = read_csv_rows(dir.str("loss.csv"));
    REQUIRE(rows.size() == 9);
    const double first = std::stod(rows[1][1]);
    const double last = std::stod(rows[8][1]);
    CHECK(last < first);
    bool any_decrease = false;
    for (size_t r = 2; r < rows.size(); ++r) {
        if (std::stod(rows[r][1]) < std::stod(rows[r - 1][1])) any_decrease = true;
    }
    CHECK(any_decrease);
    CHECK(fs::exists(dir.str("checkpoint.json")));
    CHECK(fs::exists(dir.str("checkpoint.bin")));
    CHECK(fs::exists(dir.str("codebook.csv")));

    std::string bin = slurp(dir.str("checkpoint.bin"));
    TempDir dir2("train_again");
    REQUIRE(cli::run({"train", "--epochs", "8", "--seed", "3", "--out", dir2.str()}) == 0);
    CHECK(slurp(dir2.str("checkpoint.bin")) == bin);
}

TEST_CASE("cli train with zero epochs keeps the initialization") {
    TempDir a("train0a"), b("train0b");
    CaptureStream cout_cap(std::cout);
    REQUIRE(cli::run({"train", "--epochs", "0", "--lr", "0.05", "--seed", "4", "--out", a.str()}) == 0);
    REQUIRE(cli::run({"train", "--epochs", "0", "--lr", "0.9", "--seed", "4", "--out", b.str()}) == 0);
    CHECK(slurp(a.str("checkpoint.bin")) == slurp(b.str("checkpoint.bin")));
    auto rows = read_csv_rows(a.str("loss.csv"));
    CHECK(rows.size() == 1);  // header only

    TempDir c("train0c");
    REQUIRE(cli::run({"train", "--epochs", "2", "--seed", "4", "--out", c.str()}) == 0);
    CHECK(slurp(c.str("checkpoint.bin")) != slurp(a.str("checkpoint.bin")));
}

TEST_CASE("cli train corrupt csv exits 3 naming file and line") {
    TempDir dir("train_bad");
    fs::create_directories(dir.str("corpus"));
    spit(dir.str("corpus/seq0.csv"), "1,2\n3,oops\n");
    CaptureStream cerr_cap(std::cerr);
    int code = cli::run({"train", "--corpus", dir.str("corpus"), "--out", dir.str()});
    CHECK(code == 3);
    CHECK(cerr_cap.text().find("seq0.csv:2") != std::string::npos);
}

TEST_CASE("cli generate trace length, determinism, and baseline equivalence") {
    TempDir dir("gen");
    CaptureStream cout_cap(std::cout);
    REQUIRE(cli::run({"train", "--epochs", "4", "--seed", "11", "--out", dir.str()}) == 0);
    spit(dir.str("cond.csv"), "0.5,-0.2,0.1,0.3,-0.4,0.2,0.0,0.1\n");

    fs::create_directories(dir.str("gen1"));
    REQUIRE(cli::run({"generate", "--checkpoint", dir.str("checkpoint.json"), "--condition",
                      dir.str("cond.csv"), "--length", "49", "--seed", "11", "--out",
                      dir.str("gen1")}) == 0);
    std::string trace = slurp(dir.str("gen1/trace.jsonl"));
    CHECK(std::count(trace.begin(), trace.end(), '\n') == 10);
    auto tokens = read_csv_rows(dir.str("gen1/tokens.csv"));
    CHECK(tokens.size() == 50);
    for (size_t r = 1; r < tokens.size(); ++r) CHECK(std::stoi(tokens[r][1]) >= 1);

    fs::create_directories(dir.str("gen2"));
    REQUIRE(cli::run({"generate", "--checkpoint", dir.str("checkpoint.json"), "--condition",
                      dir.str("cond.csv"), "--length", "49", "--seed", "11", "--out",
                      dir.str("gen2")}) == 0);
    CHECK(slurp(dir.str("gen2/trace.jsonl")) == trace);
    CHECK(slurp(dir.str("gen2/tokens.csv")) == slurp(dir.str("gen1/tokens.csv")));
    CHECK(slurp(dir.str("gen2/embeddings.csv")) == slurp(dir.str("gen1/embeddings.csv")));

    // all DynMask knobs zeroed: the emitted tokens match the plain
    // confidence-decoding reference run on the same checkpoint
    fs::create_directories(dir.str("gen0"));
    REQUIRE(cli::run({"generate", "--checkpoint", dir.str("checkpoint.json"), "--condition",
                      dir.str("cond.csv"), "--length", "30", "--seed", "11", "--alpha0", "0",
                      "--beta", "0", "--sigma-max", "0", "--lambda-d", "0", "--out",
                      dir.str("gen0")}) == 0);
    io::Checkpoint ckpt = io::load_checkpoint(dir.str("checkpoint.json"));
    TextCondition cond = io::load_condition(dir.str("cond.csv"));
    Config cfg = validate_config({{"seed", "11"}});
    reference::BaselineTrace base = reference::confidence_decode(ckpt.model, cond, 30, cfg);
    auto emitted = read_csv_rows(dir.str("gen0/tokens.csv"));
    REQUIRE(emitted.size() == 31);
    for (int t = 0; t < 30; ++t) {
        CHECK(std::stoi(emitted[1 + t][1]) == base.final_tokens[t]);
    }
}

TEST_CASE("cli generate bad checkpoint exits 3") {
    TempDir dir("gen_bad");
    spit(dir.str("ckpt.json"), "{not json");
    spit(dir.str("cond.csv"), "1,2\n");
    CaptureStream cerr_cap(std::cerr);
    CHECK(cli::run({"generate", "--checkpoint", dir.str("ckpt.json"), "--condition",
                    dir.str("cond.csv"), "--length", "5", "--out", dir.str()}) == 3);
}

TEST_CASE("cli compare-signals default recipe and degenerate recipe") {
    TempDir dir("cmp");
    REQUIRE(cli::run({"compare-signals", "--seed", "19", "--out", dir.str()}) == 0);
    auto rows = read_csv_rows(dir.str("signals.csv"));
    // header + 2 rows per sequence (4 sequences) + 2 aggregate rows
    REQUIRE(rows.size() == 1 + 8 + 2);
    int msd_rows = 0, vel_rows = 0;
    double msd_mean = 0.0;
    for (size_t r = 1; r < rows.size(); ++r) {
        if (rows[r][0] == "msd") msd_rows++;
        if (rows[r][0] == "velocity") vel_rows++;
        if (rows[r][0] == "msd" && rows[r][1] == "mean") msd_mean = std::stod(rows[r][2]);
    }
    CHECK(msd_rows == 5);
    CHECK(vel_rows == 5);
    CHECK(msd_mean > 0.0);

    CaptureStream cerr_cap(std::cerr);
    CHECK(cli::run({"compare-signals", "--synth", "static,T=32,D=3", "--out", dir.str()}) == 3);
}

TEST_CASE("cli config file, overrides, and unknown keys") {
    TempDir dir("cfg");
    spit(dir.str("run.cfg"), "# comment\nW = 12\ntau=2.0\n");
    REQUIRE(cli::run({"analyze", "--synth", "noise,T=16,D=2", "--config", dir.str("run.cfg"),
                      "--out", dir.str()}) == 0);
    auto rows = read_csv_rows(dir.str("msd.csv"));
    CHECK(rows[0].size() == 2 + 12);  // t, omega, phi_0..phi_11

    // flag overrides the file value
    REQUIRE(cli::run({"analyze", "--synth", "noise,T=16,D=2", "--config", dir.str("run.cfg"),
                      "--window", "8", "--out", dir.str()}) == 0);
    rows = read_csv_rows(dir.str("msd.csv"));
    CHECK(rows[0].size() == 2 + 8);

    spit(dir.str("bad.cfg"), "wibble=1\n");
    CaptureStream cerr_cap(std::cerr);
    CHECK(cli::run({"analyze", "--synth", "noise,T=16,D=2", "--config", dir.str("bad.cfg"),
                    "--out", dir.str()}) == 2);
    CHECK(cli::run({"analyze", "--synth", "noise,T=16,D=2", "--window", "7", "--out",
                    dir.str()}) == 2);
    CHECK(cli::run({"analyze", "--nonsense"}) == 2);
}
