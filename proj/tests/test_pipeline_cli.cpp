#include <catch_amalgamated.hpp>

#include <algorithm>
#include <sstream>

#include "dept/cli.hpp"
#include "oracles.hpp"

using namespace dept;
using Catch::Matchers::ContainsSubstring;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    CliResult res;
    res.code = cli::run(std::move(args), out, err);
    res.out = out.str();
    res.err = err.str();
    return res;
}

// fx = fy = 100, principal point (16, 12), identity velo-to-cam.
const char* kMiniCalib =
    "P2: 100 0 16 0 0 100 12 0 0 0 1 0\n"
    "Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";

// Two 32x24 frames on a stride-4 grid (8x6 cells).
//
// 0001 carries five points: two seeds that land in boxes (cells (1,1) at 10 m
// and (6,3) at 20 m), one in-box point past the depth cutoff, one point in no
// box, and one behind the camera. With the 0.5 default sigma each seed stamps
// a 3x3 patch: 2 original + 16 propagated cells. Boxes: class 0 and class 1
// kept, one low-score drop, one degenerate drop.
//
// 0002 carries the 10 m seed and a class-2 box: 1 original + 8 propagated.
void write_mini_dataset(const fs::path& dir) {
    fs::create_directories(dir / "velodyne");
    fs::create_directories(dir / "calib");
    oracles::write_file_bytes(dir / "velodyne" / "0001.bin",
                              oracles::velodyne_bytes({{-1.0f, -0.6f, 10.0f, 0.5f},
                                                       {9.8f, 4.2f, 70.0f, 0.1f},
                                                       {0.0f, 0.0f, -5.0f, 0.2f},
                                                       {2.0f, 0.4f, 20.0f, 0.3f},
                                                       {-1.12f, 0.64f, 8.0f, 0.9f}}));
    oracles::write_file_bytes(dir / "velodyne" / "0002.bin",
                              oracles::velodyne_bytes({{-1.0f, -0.6f, 10.0f, 0.5f}}));
    oracles::write_file_text(dir / "calib" / "0001.txt", kMiniCalib);
    oracles::write_file_text(dir / "calib" / "0002.txt", kMiniCalib);
    oracles::write_file_text(dir / "frames.ndjson",
                             "{\"frame_id\":\"0001\",\"width\":32,\"height\":24}\n"
                             "{\"frame_id\":\"0002\",\"width\":32,\"height\":24}\n");
    oracles::write_file_text(
        dir / "detections.ndjson",
        R"({"frame_id":"0001","class_id":0,"bbox":[4,4,12,12],"score":0.9})" "\n"
        R"({"frame_id":"0001","class_id":1,"bbox":[24,12,32,20],"score":0.5})" "\n"
        R"({"frame_id":"0001","class_id":0,"bbox":[0,0,3,3],"score":0.29})" "\n"
        R"({"frame_id":"0001","class_id":2,"bbox":[5,5,5,9],"score":0.8})" "\n"
        R"({"frame_id":"0002","class_id":2,"bbox":[4,4,12,12],"score":0.6})" "\n");
}

const char* kBundleFiles[] = {"depth.png",   "depth_raw.bin", "provenance.bin",
                              "corners.bin", "centers.bin",   "targets.json"};

}  // namespace

TEST_CASE("box clipping clamps overhang and drops what collapses") {
    const std::vector<Box2D> boxes = {
        {.class_id = 0, .x_min = -5, .y_min = -5, .x_max = 10, .y_max = 10},
        {.class_id = 1, .x_min = 40, .y_min = 5, .x_max = 50, .y_max = 9},
        {.class_id = 2, .x_min = 3, .y_min = 3, .x_max = 9, .y_max = 9}};
    const auto clipped = clip_boxes(boxes, 32, 24);
    REQUIRE(clipped.size() == 2u);
    CHECK(clipped[0].x_min == 0.0);
    CHECK(clipped[0].y_min == 0.0);
    CHECK(clipped[0].x_max == 10.0);
    CHECK(clipped[1].class_id == 2);
    CHECK(clipped[1].x_min == 3.0);
}

TEST_CASE("process_frame wires projection, filtering, propagation and targets together") {
    oracles::TempDir tmp("frame");
    write_mini_dataset(tmp.path);

    PipelineConfig cfg;
    const DetectionSet detections =
        read_detections_file(tmp.path / "detections.ndjson", cfg.score_threshold);

    FrameRecord rec;
    rec.frame_id = "0001";
    rec.image_w = 32;
    rec.image_h = 24;
    rec.calib_path = tmp.path / "calib" / "0001.txt";
    rec.lidar_path = tmp.path / "velodyne" / "0001.bin";
    rec.boxes = detections.by_frame.at("0001");

    const TargetBundle bundle = process_frame(rec, cfg);
    CHECK(bundle.depth.width == 8);
    CHECK(bundle.depth.height == 6);
    CHECK(bundle.depth.count(Provenance::Original) == 2);
    CHECK(bundle.depth.count(Provenance::Propagated) == 16);

    // The same stages composed by hand give the same depth target.
    const KittiCalib calib = read_kitti_calib_file(rec.calib_path);
    const auto points = read_velodyne_file(rec.lidar_path);
    const auto sparse = lidar_to_sparse_depth(points, calib.extrinsic, calib.camera(32, 24), 4);
    CHECK(sparse.present_count() == 4);  // cutoff applies later, in the region filter
    const auto boxes = clip_boxes(rec.boxes, 32, 24);
    const auto filtered = region_filter(sparse, boxes, cfg.max_depth);
    CHECK(filtered.present_count() == 2);
    UncertaintyMap sigma(8, 6, cfg.sigma_const);
    CHECK(bundle.depth == propagate(filtered, sigma, cfg.propagation()));
    CHECK(bundle.corners == corner_heatmaps(boxes, 4, 8, 6));

    REQUIRE(bundle.detection.entries.size() == 2u);
    const auto& a = bundle.detection.entries[0];
    CHECK(a.class_id == 0);
    CHECK(a.cell_x == 2);
    CHECK(a.cell_y == 2);
    CHECK(a.size_w == 2.0);
    CHECK(a.size_h == 2.0);
    CHECK(a.offset_x == 0.0);
    CHECK(a.offset_y == 0.0);
    const auto& b = bundle.detection.entries[1];
    CHECK(b.class_id == 1);
    CHECK(b.cell_x == 7);
    CHECK(b.cell_y == 4);

    CHECK(bundle.meta.frame_id == "0001");
    CHECK(bundle.meta.image_w == 32);
    CHECK(bundle.meta.stride == 4);
}

TEST_CASE("gen-targets walks a dataset and reports what it produced") {
    oracles::TempDir tmp("gen");
    write_mini_dataset(tmp.path / "data");
    const auto out_dir = tmp.path / "out";

    const CliResult res = run_cli(
        {"gen-targets", (tmp.path / "data").string(), "--out", out_dir.string(), "--json"});
    INFO(res.err);
    CHECK(res.code == cli::kOk);
    CHECK_THAT(res.out, ContainsSubstring("frames: 2 ok, 0 failed, 2 total"));
    CHECK_THAT(res.out, ContainsSubstring("depth cells: 3 original, 24 propagated"));
    CHECK_THAT(res.out, ContainsSubstring("detection entries: 3"));
    CHECK_THAT(res.out, ContainsSubstring("boxes dropped: 1 low score, 1 degenerate"));
    CHECK_THAT(res.out, ContainsSubstring("class 0: 1 boxes, w = 1.0000  (majority)"));
    CHECK_THAT(res.out,
               ContainsSubstring("0001: ok (original 2, propagated 16, entries 2, boxes 2)"));
    CHECK_THAT(res.out,
               ContainsSubstring("0002: ok (original 1, propagated 8, entries 1, boxes 1)"));

    // The printed report is also the report file.
    const auto report_bytes = oracles::read_file_bytes(out_dir / "report.txt");
    CHECK(std::string(report_bytes.begin(), report_bytes.end()) == res.out);

    const TargetBundle one = read_target_bundle(out_dir / "0001");
    CHECK(one.depth.count(Provenance::Original) == 2);
    CHECK(one.depth.count(Provenance::Propagated) == 16);
    CHECK(one.detection.entries.size() == 2u);
    CHECK(one.meta.frame_id == "0001");
    CHECK(one.meta.image_w == 32);
    const TargetBundle two = read_target_bundle(out_dir / "0002");
    CHECK(two.depth.count(Provenance::Original) == 1);
    CHECK(two.detection.entries.size() == 1u);
    CHECK(two.detection.entries[0].class_id == 2);

    const auto json = nlohmann::json::parse(oracles::read_file_bytes(out_dir / "report.json"));
    CHECK(json.at("frames").at("ok").get<int>() == 2);
    CHECK(json.at("classes")[0].at("weight").get<double>() == 1.0);
    CHECK(json.at("frames_by_id")[0].at("frame_id").get<std::string>() == "0001");
}

TEST_CASE("gen-targets output does not depend on the worker count") {
    oracles::TempDir tmp("jobs");
    write_mini_dataset(tmp.path / "data");
    const auto out1 = tmp.path / "out1";
    const auto out4 = tmp.path / "out4";

    REQUIRE(run_cli({"gen-targets", (tmp.path / "data").string(), "--out", out1.string(),
                     "--jobs", "1"})
                .code == cli::kOk);
    REQUIRE(run_cli({"gen-targets", (tmp.path / "data").string(), "--out", out4.string(),
                     "--jobs", "4"})
                .code == cli::kOk);

    for (const char* frame : {"0001", "0002"})
        for (const char* name : kBundleFiles)
            CHECK(oracles::read_file_bytes(out1 / frame / name) ==
                  oracles::read_file_bytes(out4 / frame / name));
}

TEST_CASE("gen-targets flags an empty dataset") {
    oracles::TempDir tmp("empty");
    fs::create_directories(tmp.path / "data");
    const CliResult res =
        run_cli({"gen-targets", (tmp.path / "data").string(), "--out", (tmp.path / "o").string()});
    CHECK(res.code == cli::kInputError);
    CHECK_THAT(res.err, ContainsSubstring("no frames found"));
}

TEST_CASE("one bad frame is reported without sinking the rest") {
    oracles::TempDir tmp("bad-frame");
    write_mini_dataset(tmp.path / "data");
    auto ragged = oracles::velodyne_bytes({{1, 2, 3, 0}});
    ragged.push_back(0);
    oracles::write_file_bytes(tmp.path / "data" / "velodyne" / "0002.bin", ragged);

    const auto out_dir = tmp.path / "out";
    const CliResult res =
        run_cli({"gen-targets", (tmp.path / "data").string(), "--out", out_dir.string()});
    CHECK(res.code == cli::kInputError);
    CHECK_THAT(res.out, ContainsSubstring("frames: 1 ok, 1 failed, 2 total"));
    CHECK_THAT(res.out, ContainsSubstring("0002: FAILED"));
    CHECK_THAT(res.out, ContainsSubstring("not a multiple of 16"));
    CHECK(fs::exists(out_dir / "0001" / "targets.json"));
    CHECK_FALSE(fs::exists(out_dir / "0002" / "targets.json"));
}

TEST_CASE("per-frame sigma rasters override the constant, with shape checks") {
    oracles::TempDir tmp("sigma");
    write_mini_dataset(tmp.path / "data");
    fs::create_directories(tmp.path / "sigma");
    write_sigma_file(tmp.path / "sigma" / "0001.bin", UncertaintyMap(8, 6, 0.2));
    write_sigma_file(tmp.path / "sigma" / "0002.bin", UncertaintyMap(4, 4, 0.2));

    const auto out_dir = tmp.path / "out";
    const CliResult res =
        run_cli({"gen-targets", (tmp.path / "data").string(), "--out", out_dir.string(),
                 "--sigma-dir", (tmp.path / "sigma").string()});
    CHECK(res.code == cli::kInputError);  // the 4x4 raster fails its frame

    // Confident seeds now stamp 5x5 patches: 16 + 20 cells after clipping.
    CHECK_THAT(res.out,
               ContainsSubstring("0001: ok (original 2, propagated 34, entries 2, boxes 2)"));
    CHECK_THAT(res.out, ContainsSubstring("0002: FAILED"));
    CHECK_THAT(res.out, ContainsSubstring("sigma raster vs target grid"));
}

TEST_CASE("a config file fills in flags that were not passed") {
    oracles::TempDir tmp("config");
    write_mini_dataset(tmp.path / "data");
    oracles::write_file_text(tmp.path / "gen.cfg", "[gen-targets]\nstride=8\n");

    const auto out_dir = tmp.path / "out";
    const CliResult res =
        run_cli({"gen-targets", (tmp.path / "data").string(), "--out", out_dir.string(),
                 "--config", (tmp.path / "gen.cfg").string()});
    INFO(res.err);
    REQUIRE(res.code == cli::kOk);
    CHECK(read_target_bundle(out_dir / "0001").meta.stride == 8);
}

TEST_CASE("gradcheck passes as built and fails when perturbed") {
    const CliResult pass = run_cli({"gradcheck"});
    CHECK(pass.code == cli::kOk);
    CHECK_THAT(pass.out, ContainsSubstring("result: PASS"));

    const CliResult again = run_cli({"gradcheck"});
    CHECK(again.out == pass.out);

    const CliResult broken = run_cli({"gradcheck", "--perturb"});
    CHECK(broken.code == cli::kVerificationError);
    CHECK_THAT(broken.out, ContainsSubstring("result: FAIL"));
}

TEST_CASE("toy training emits one csv row per epoch, deterministically") {
    const CliResult empty = run_cli({"toy", "--mode", "train", "--epochs", "0"});
    CHECK(empty.code == cli::kOk);
    CHECK(empty.out == "run,epoch,depth,corner_focal,center_focal,size,offset,total\n");

    const std::vector<std::string> args = {"toy",      "--mode",   "train", "--epochs", "3",
                                           "--scenes", "2",        "--hidden", "8"};
    const CliResult a = run_cli(args);
    const CliResult b = run_cli(args);
    REQUIRE(a.code == cli::kOk);
    CHECK(a.out == b.out);
    CHECK(a.out.starts_with("run,epoch,"));
    CHECK_THAT(a.out, ContainsSubstring("\ntrain,1,"));
    CHECK_THAT(a.out, ContainsSubstring("\ntrain,3,"));
    CHECK(std::count(a.out.begin(), a.out.end(), '\n') == 4);  // header + 3 epochs

    oracles::TempDir tmp("toy-csv");
    auto to_file = args;
    to_file.push_back("--out");
    to_file.push_back((tmp.path / "curve.csv").string());
    const CliResult c = run_cli(to_file);
    REQUIRE(c.code == cli::kOk);
    CHECK(c.out.empty());
    const auto bytes = oracles::read_file_bytes(tmp.path / "curve.csv");
    CHECK(std::string(bytes.begin(), bytes.end()) == a.out);
}

TEST_CASE("toy transfer prints the comparison and both loss curves") {
    const CliResult res = run_cli({"toy", "--mode", "transfer", "--epochs", "6",
                                   "--pretrain-epochs", "4", "--scenes", "2", "--hidden", "8"});
    REQUIRE(res.code == cli::kOk);
    CHECK_THAT(res.out, ContainsSubstring("depth loss, mean of fine-tune epochs 1-5: pretrained "));
    CHECK_THAT(res.out, ContainsSubstring("verdict: pretrained"));
    CHECK_THAT(res.out, ContainsSubstring("\npretrained,1,"));
    CHECK_THAT(res.out, ContainsSubstring("\nscratch,6,"));
}

TEST_CASE("class-weights prints counts, weights and the majority marker") {
    oracles::TempDir tmp("cw");
    std::string text;
    for (int i = 0; i < 4; ++i)
        text += R"({"frame_id":"a","class_id":0,"bbox":[0,0,10,10],"score":0.9})" "\n";
    text += R"({"frame_id":"b","class_id":1,"bbox":[0,0,10,10],"score":0.9})" "\n";
    oracles::write_file_text(tmp.path / "det.ndjson", text);

    const CliResult res =
        run_cli({"class-weights", (tmp.path / "det.ndjson").string(), "--n-classes", "2"});
    REQUIRE(res.code == cli::kOk);
    CHECK_THAT(res.out, ContainsSubstring("class 0: count 4, w = 1.0000  (majority)\n"));
    CHECK_THAT(res.out, ContainsSubstring("class 1: count 1, w = 2.0000\n"));

    const CliResult zero =
        run_cli({"class-weights", (tmp.path / "det.ndjson").string(), "--n-classes", "3"});
    CHECK(zero.code == cli::kVerificationError);
    CHECK_THAT(zero.err, ContainsSubstring("dept: "));

    const CliResult gone = run_cli({"class-weights", (tmp.path / "absent.ndjson").string()});
    CHECK(gone.code == cli::kInputError);
    CHECK_THAT(gone.err, ContainsSubstring("cannot open"));
}

TEST_CASE("the cli reports its version and rejects unknown invocations") {
    const CliResult version = run_cli({"--version"});
    CHECK(version.code == cli::kOk);
    CHECK_THAT(version.out, ContainsSubstring("0.1.0"));

    CHECK(run_cli({}).code == cli::kInputError);
    CHECK(run_cli({"frobnicate"}).code == cli::kInputError);
    CHECK(run_cli({"gen-targets"}).code == cli::kInputError);  // missing required args
}
