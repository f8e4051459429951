// End-to-end checks of the strokeuq executable: determinism, exit codes,
// file outputs, the gen -> cv smoke path.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "strokeuq/text.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = STROKEUQ_CLI_PATH;

std::string sandbox() {
    static const std::string dir = [] {
        const auto d = fs::temp_directory_path() / "strokeuq_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d.string();
    }();
    return dir;
}

int run(const std::string& args, const std::string& stderr_to = "") {
    std::string cmd = kCli + " " + args;
    if (!stderr_to.empty()) cmd += " 2>" + stderr_to;
    else cmd += " 2>/dev/null";
    cmd += " >/dev/null";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string small_gen_flags(const std::string& out, int seed) {
    return "gen --seed " + std::to_string(seed) + " --out " + out +
           " --stroke-patients 10 --tia-patients 10 --images-min 6 --images-max 10"
           " --images-mean 8 --stroke-images-mean 3 --mc-runs 10";
}

}  // namespace

TEST_CASE("gen: same seed twice gives identical files") {
    const std::string dir = sandbox();
    REQUIRE(run(small_gen_flags(dir + "/a.csv", 7)) == 0);
    REQUIRE(run(small_gen_flags(dir + "/b.csv", 7)) == 0);
    CHECK(strokeuq::read_file(dir + "/a.csv") == strokeuq::read_file(dir + "/b.csv"));
    // rerunning with identical flags reproduces the manifest byte for byte
    const auto manifest_before = strokeuq::read_file(dir + "/a.csv.manifest.json");
    REQUIRE(run(small_gen_flags(dir + "/a.csv", 7)) == 0);
    CHECK(strokeuq::read_file(dir + "/a.csv.manifest.json") == manifest_before);
}

TEST_CASE("measure: writes the per-image CSV and the histogram CSV") {
    const std::string dir = sandbox();
    REQUIRE(run(small_gen_flags(dir + "/m.csv", 9)) == 0);
    REQUIRE(run("measure --data " + dir + "/m.csv --out " + dir + "/meas.csv --hist-out " + dir +
                "/hist.csv") == 0);
    const auto meas = strokeuq::read_file(dir + "/meas.csv");
    CHECK(meas.rfind("patient_id,image_id,p_bar_stroke,var,vr,pe,mi,epi,alea,predicted_class\n",
                     0) == 0);
    const auto hist = strokeuq::read_file(dir + "/hist.csv");
    CHECK(hist.find("hist_bin_1,") != std::string::npos);
    CHECK(hist.find("hist_bin_100\n") != std::string::npos);
    CHECK(fs::exists(dir + "/meas.csv.manifest.json"));
}

TEST_CASE("train + predict: model file round trip and deterministic predictions") {
    const std::string dir = sandbox();
    REQUIRE(run(small_gen_flags(dir + "/tr.csv", 11)) == 0);
    REQUIRE(run(small_gen_flags(dir + "/va.csv", 12)) == 0);
    REQUIRE(run("train --variant fcnn_p --train " + dir + "/tr.csv --valid " + dir +
                "/va.csv --model-out " + dir + "/model.json --epochs 5 --seed 3") == 0);
    CHECK(fs::exists(dir + "/model.json"));
    CHECK(fs::exists(dir + "/model.json.log.csv"));
    CHECK(fs::exists(dir + "/model.json.manifest.json"));

    const std::string predict_flags = "predict --model " + dir + "/model.json --data " + dir +
                                      "/va.csv --mc-runs 20 --seed 5 --out ";
    REQUIRE(run(predict_flags + dir + "/p1.csv") == 0);
    REQUIRE(run(predict_flags + dir + "/p2.csv") == 0);
    CHECK(strokeuq::read_file(dir + "/p1.csv") == strokeuq::read_file(dir + "/p2.csv"));
    CHECK(strokeuq::read_file(dir + "/p1.csv")
              .rfind("patient_id,p_bar_stroke,var,vr,pe,mi,epi,alea,predicted_label,true_label\n",
                     0) == 0);

    // max needs no training and is rejected by train
    CHECK(run("train --variant max --train " + dir + "/tr.csv --valid " + dir +
              "/va.csv --model-out " + dir + "/nope.json") == 1);
}

TEST_CASE("eval: metrics and plot data from a predictions file") {
    const std::string dir = sandbox();
    REQUIRE(run(small_gen_flags(dir + "/ev.csv", 21)) == 0);
    REQUIRE(run(small_gen_flags(dir + "/ev2.csv", 22)) == 0);
    REQUIRE(run("train --variant fcnn_p --train " + dir + "/ev.csv --valid " + dir +
                "/ev2.csv --model-out " + dir + "/evm.json --epochs 5 --seed 3") == 0);
    REQUIRE(run("predict --model " + dir + "/evm.json --data " + dir + "/ev2.csv --mc-runs 20 " +
                "--seed 5 --out " + dir + "/evp.csv") == 0);
    REQUIRE(run("eval --pred " + dir + "/evp.csv --out-dir " + dir + "/evout") == 0);
    CHECK(fs::exists(dir + "/evout/metrics.json"));
    CHECK(fs::exists(dir + "/evout/calibration.csv"));
    CHECK(fs::exists(dir + "/evout/roc_pe.csv"));
    CHECK(fs::exists(dir + "/evout/removal_alea.csv"));
    CHECK(fs::exists(dir + "/evout/manifest.json"));
}

TEST_CASE("eval: single-class predictions exit 1 and name the roc_auc error") {
    const std::string dir = sandbox();
    // hand-written predictions where every row is correct
    const std::string pred =
        "patient_id,p_bar_stroke,var,vr,pe,mi,epi,alea,predicted_label,true_label\n"
        "a,0.9,0.01,0,0.3,0.01,0.01,0.05,stroke,stroke\n"
        "b,0.1,0.01,0,0.3,0.01,0.01,0.05,tia,tia\n";
    strokeuq::atomic_write_file(dir + "/allcorrect.csv", pred);
    const std::string err_file = dir + "/err.txt";
    CHECK(run("eval --pred " + dir + "/allcorrect.csv --out-dir " + dir + "/evfail", err_file) == 1);
    const auto err = strokeuq::read_file(err_file);
    CHECK(err.find("roc_auc") != std::string::npos);
}

TEST_CASE("predict with a cv-produced max model; eval handles absent uncertainty") {
    const std::string dir = sandbox();
    REQUIRE(run("gen --seed 41 --out " + dir +
                "/mx.csv --stroke-patients 10 --tia-patients 10 --images-min 6 --images-max 10"
                " --images-mean 8 --stroke-images-mean 3 --mc-runs 10 --difficulty-mix 0.3") == 0);
    REQUIRE(run("cv --data " + dir + "/mx.csv --variants max --seed 2 --mc-runs 5 --out-dir " +
                dir + "/mxcv") == 0);
    REQUIRE(run("predict --model " + dir + "/mxcv/fold_1/model_max.json --data " + dir +
                "/mx.csv --out " + dir + "/mxpred.csv") == 0);
    const auto pred = strokeuq::read_file(dir + "/mxpred.csv");
    CHECK(pred.find(",,,,,,") != std::string::npos);  // uncertainty columns absent
    // eval still reports accuracy + calibration; no ROC/removal files
    REQUIRE(run("eval --pred " + dir + "/mxpred.csv --out-dir " + dir + "/mxeval") == 0);
    CHECK(fs::exists(dir + "/mxeval/metrics.json"));
    CHECK(fs::exists(dir + "/mxeval/calibration.csv"));
    CHECK_FALSE(fs::exists(dir + "/mxeval/roc_pe.csv"));
}

TEST_CASE("exit codes: missing input file is an I/O error") {
    const std::string dir = sandbox();
    CHECK(run("measure --data " + dir + "/does_not_exist.csv --out " + dir + "/x.csv") == 2);
    CHECK(run("definitely-not-a-subcommand") == 1);
}

TEST_CASE("full pipeline: gen then cv emits table2.csv, deterministically across threads") {
    const std::string dir = sandbox();
    REQUIRE(run("gen --seed 31 --out " + dir +
                "/cohort.csv --stroke-patients 20 --tia-patients 20 --images-min 6 --images-max 10"
                " --images-mean 8 --stroke-images-mean 3 --mc-runs 10") == 0);
    const std::string common = "cv --data " + dir + "/cohort.csv --variants max,fcnn_p --seed 13" +
                               " --epochs 5 --mc-runs 10 ";
    REQUIRE(run(common + "--out-dir " + dir + "/cv1 --threads 1") == 0);
    REQUIRE(run(common + "--out-dir " + dir + "/cv2 --threads 2") == 0);
    CHECK(fs::exists(dir + "/cv1/table2.csv"));
    CHECK(fs::exists(dir + "/cv1/metrics.json"));
    CHECK(fs::exists(dir + "/cv1/manifest.json"));
    CHECK(fs::exists(dir + "/cv1/fold_1/model_fcnn_p.json"));
    CHECK(fs::exists(dir + "/cv1/fold_5/predictions_max.csv"));
    CHECK(fs::exists(dir + "/cv1/pooled/removal_fcnn_p_pe.csv"));
    // byte-identical across parallelism settings (manifests exclude threads)
    CHECK(strokeuq::read_file(dir + "/cv1/table2.csv") ==
          strokeuq::read_file(dir + "/cv2/table2.csv"));
    CHECK(strokeuq::read_file(dir + "/cv1/metrics.json") ==
          strokeuq::read_file(dir + "/cv2/metrics.json"));
    for (int f = 1; f <= 5; ++f) {
        const std::string rel = "/fold_" + std::to_string(f) + "/predictions_fcnn_p.csv";
        CHECK(strokeuq::read_file(dir + "/cv1" + rel) == strokeuq::read_file(dir + "/cv2" + rel));
    }
}
