#include <catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "dept/io_formats.hpp"
#include "dept/png16.hpp"
#include "oracles.hpp"

using namespace dept;
using Catch::Matchers::ContainsSubstring;

namespace {

const char* kCalibText =
    "P2: 7.070493e+02 0.0 6.040814e+02 4.575831e+01 0.0 7.070493e+02 1.805066e+02 "
    "-3.454157e-01 0.0 0.0 1.0 4.981016e-03\n"
    "Tr_velo_to_cam: 0 -1 0 0 0 0 -1 0 1 0 0 -0.27\n";

const char* kRectLine =
    "R0_rect: 0.9999 0.0098 -0.0074 -0.0099 0.9999 -0.0043 0.0074 0.0043 0.9999\n";

}  // namespace

TEST_CASE("calibration text yields intrinsics and a velo-to-camera transform") {
    const KittiCalib calib = read_kitti_calib(std::string(kCalibText));
    CHECK(calib.fx == 7.070493e+02);
    CHECK(calib.fy == 7.070493e+02);
    CHECK(calib.cx == 6.040814e+02);
    CHECK(calib.cy == 1.805066e+02);
    CHECK_FALSE(calib.rect.has_value());

    Eigen::Matrix3d r;
    r << 0, -1, 0, 0, 0, -1, 1, 0, 0;
    CHECK(calib.extrinsic.rotation == r);
    CHECK(calib.extrinsic.translation == Eigen::Vector3d(0, 0, -0.27));

    const CameraModel cam = calib.camera(1242, 375);
    cam.validate();
    CHECK(cam.fx == calib.fx);
    CHECK(cam.image_w == 1242);
}

TEST_CASE("a rectifying rotation is folded into the extrinsic") {
    const KittiCalib calib = read_kitti_calib(std::string(kCalibText) + kRectLine);
    REQUIRE(calib.rect.has_value());

    Eigen::Matrix3d rect;
    rect << 0.9999, 0.0098, -0.0074, -0.0099, 0.9999, -0.0043, 0.0074, 0.0043, 0.9999;
    Eigen::Matrix3d r;
    r << 0, -1, 0, 0, 0, -1, 1, 0, 0;
    const Eigen::Vector3d t(0, 0, -0.27);

    CHECK(*calib.rect == rect);
    CHECK(calib.extrinsic.rotation == Eigen::Matrix3d(rect * r));
    CHECK(calib.extrinsic.translation == Eigen::Vector3d(rect * t));
}

TEST_CASE("calibration parsing reports what is missing or malformed") {
    try {
        read_kitti_calib(std::string("Tr_velo_to_cam: 0 -1 0 0 0 0 -1 0 1 0 0 -0.27\n"));
        FAIL("expected MissingKey");
    } catch (const MissingKey& e) {
        CHECK(e.key() == "P2");
    }
    try {
        read_kitti_calib(std::string("P2: 1 2 3 4 5 6 7 8 9 10 11 12\n"));
        FAIL("expected MissingKey");
    } catch (const MissingKey& e) {
        CHECK(e.key() == "Tr_velo_to_cam");
    }
    try {
        read_kitti_calib(std::string("comment line\nP2: 1 2 3 4 5 6 7 8 9 10 11\n"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
        CHECK_THAT(e.what(), ContainsSubstring("expected 12 floats, got 11"));
    }
    CHECK_THROWS_WITH(read_kitti_calib(std::string("P2: 1 2 bogus 4 5 6 7 8 9 10 11 12\n")),
                      ContainsSubstring("non-numeric token 'bogus'"));
}

TEST_CASE("velodyne payloads are raw float quadruples") {
    CHECK(read_velodyne_bin({}).empty());

    const auto bytes = oracles::velodyne_bytes({{1.5f, -2.25f, 3.0f, 0.5f}});
    const auto points = read_velodyne_bin(bytes);
    REQUIRE(points.size() == 1u);
    CHECK(points[0].x == 1.5f);
    CHECK(points[0].y == -2.25f);
    CHECK(points[0].z == 3.0f);
    CHECK(points[0].intensity == 0.5f);

    auto ragged = bytes;
    ragged.push_back(0);
    CHECK_THROWS_AS(read_velodyne_bin(ragged), TruncatedFile);

    oracles::TempDir tmp("velo");
    oracles::write_file_bytes(tmp.path / "points.bin", bytes);
    CHECK(read_velodyne_file(tmp.path / "points.bin").size() == 1u);
    CHECK_THROWS_AS(read_velodyne_file(tmp.path / "absent.bin"), IoError);
}

TEST_CASE("detection streams apply the score threshold and drop degenerate boxes") {
    const std::string text =
        R"({"frame_id":"000001","class_id":0,"bbox":[10,20,110,220],"score":0.9})" "\n"
        R"({"frame_id":"000001","class_id":1,"bbox":[5,5,50,60],"score":0.3})" "\n"
        "\n"
        R"({"frame_id":"000002","class_id":0,"bbox":[1,2,3,4],"score":0.29})" "\n"
        R"({"frame_id":"000002","class_id":2,"bbox":[7,7,7,9],"score":0.8})" "\n";

    std::istringstream in(text);
    const DetectionSet set = read_detections(in);
    CHECK(set.total_boxes() == 2);
    CHECK(set.dropped_low_score == 1);
    CHECK(set.dropped_degenerate == 1);
    REQUIRE(set.by_frame.count("000001") == 1u);
    CHECK(set.by_frame.count("000002") == 0u);

    const auto& boxes = set.by_frame.at("000001");
    REQUIRE(boxes.size() == 2u);
    CHECK(boxes[0].class_id == 0);
    CHECK(boxes[0].x_min == 10.0);
    CHECK(boxes[0].y_max == 220.0);
    CHECK(boxes[0].score == 0.9);
    CHECK(boxes[1].score == 0.3);  // threshold is strict

    std::istringstream lax(text);
    CHECK(read_detections(lax, 0.0).total_boxes() == 3);

    std::istringstream broken("{\"frame_id\":\"a\",\"class_id\":0,\"bbox\":[0,0,1,1],\"score\":1}\n{oops\n");
    try {
        read_detections(broken);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }

    std::istringstream partial(R"({"frame_id":"a"})");
    CHECK_THROWS_AS(read_detections(partial), ParseError);
}

TEST_CASE("label files bridge into the same box stream") {
    const std::string text =
        "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59\n"
        "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10\n"
        "Cyclist 0.00 0 1.89 166.71 176.14 216.61 246.56 1.75 0.67 1.64 -5.17 1.69 14.22 1.55 0.77\n"
        "Van 0.00 0 2.07 241.00 176.22 307.32 225.49 1.73 1.62 4.08 -7.56 1.71 22.77 1.75\n";
    std::istringstream in(text);
    const auto boxes = read_kitti_labels(in, {"Car", "Cyclist"});
    REQUIRE(boxes.size() == 2u);
    CHECK(boxes[0].class_id == 0);
    CHECK(boxes[0].x_min == 587.01);
    CHECK(boxes[0].y_min == 173.33);
    CHECK(boxes[0].x_max == 614.12);
    CHECK(boxes[0].y_max == 200.12);
    CHECK(boxes[0].score == 1.0);
    CHECK(boxes[1].class_id == 1);
    CHECK(boxes[1].score == 0.77);

    std::istringstream ragged("Truck 1 2 3\n");
    try {
        read_kitti_labels(ragged, {"Truck"});
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 1);
    }
}

TEST_CASE("class counting is exact and rejects out-of-range ids") {
    std::vector<Box2D> boxes;
    for (int i = 0; i < 3; ++i)
        boxes.push_back({.class_id = 0, .x_min = 0, .y_min = 0, .x_max = 1, .y_max = 1});
    boxes.push_back({.class_id = 2, .x_min = 0, .y_min = 0, .x_max = 1, .y_max = 1});
    const auto counts = count_classes(std::span<const Box2D>(boxes), 3);
    CHECK(counts == std::vector<long long>{3, 0, 1});

    boxes[0].class_id = 5;
    try {
        count_classes(std::span<const Box2D>(boxes), 3);
        FAIL("expected UnknownClass");
    } catch (const UnknownClass& e) {
        CHECK(e.class_id() == 5);
    }

    DetectionSet set;
    set.by_frame["a"] = {{.class_id = 1, .x_min = 0, .y_min = 0, .x_max = 1, .y_max = 1}};
    set.by_frame["b"] = {{.class_id = 1, .x_min = 0, .y_min = 0, .x_max = 1, .y_max = 1}};
    CHECK(count_classes(set, 2) == std::vector<long long>{0, 2});
}

TEST_CASE("16-bit png images survive a round trip exactly") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> value(0, 65535);
    for (const auto [w, h] : {std::pair{1, 1}, {7, 3}, {64, 64}}) {
        std::vector<uint16_t> pixels(static_cast<size_t>(w) * h);
        for (auto& p : pixels) p = static_cast<uint16_t>(value(rng));
        const auto bytes = png16::encode(pixels, w, h);
        const png16::Image img = png16::decode(bytes);
        CHECK(img.width == w);
        CHECK(img.height == h);
        CHECK(img.pixels == pixels);
    }
}

TEST_CASE("png depth quantization stays within half a step") {
    CHECK(depth_to_png(12.345) == 3160);
    CHECK(depth_to_png(0.0) == 0);
    CHECK(depth_to_png(300.0) == 65535);  // clamped

    std::mt19937_64 rng(2025);
    std::uniform_real_distribution<double> depth(0.01, 255.9);
    for (int i = 0; i < 500; ++i) {
        const double d = depth(rng);
        CHECK(std::abs(depth_to_png(d) / kPngDepthScale - d) <= 0.5 / kPngDepthScale);
    }
}

TEST_CASE("the png decoder rejects what it cannot represent") {
    const auto bytes = png16::encode({100, 200, 300, 400}, 2, 2);

    auto bad_sig = bytes;
    bad_sig[0] ^= 0xFF;
    CHECK_THROWS_WITH(png16::decode(bad_sig), ContainsSubstring("not a png file"));

    auto bad_depth = bytes;
    bad_depth[24] = 8;  // IHDR bit-depth byte
    CHECK_THROWS_WITH(png16::decode(bad_depth), ContainsSubstring("expected 16-bit grayscale"));

    auto cut = bytes;
    cut.resize(cut.size() - 13);  // drops IEND and one byte of the IDAT chunk
    CHECK_THROWS_WITH(png16::decode(cut), ContainsSubstring("truncated chunk"));
}

TEST_CASE("heatmap rasters store f32, sigma rasters store f64") {
    oracles::TempDir tmp("raster");

    HeatmapSet heat(3, 5, 4);
    for (size_t i = 0; i < heat.values.size(); ++i)
        heat.values[i] = 0.1 * static_cast<double>(i) + 0.017;
    write_heatmap_file(tmp.path / "h.bin", heat);
    const HeatmapSet back = read_heatmap_file(tmp.path / "h.bin");
    REQUIRE(back.same_shape(heat));
    for (size_t i = 0; i < heat.values.size(); ++i)
        CHECK(back.values[i] == static_cast<double>(static_cast<float>(heat.values[i])));

    UncertaintyMap sigma(4, 3, 0.5);
    sigma.sigma[5] = 0.123456789012345678;
    write_sigma_file(tmp.path / "s.bin", sigma);
    const UncertaintyMap sback = read_sigma_file(tmp.path / "s.bin");
    CHECK(sback.sigma == sigma.sigma);  // doubles round-trip bit for bit

    // Wrong magic: a heatmap raster is not a sigma raster.
    CHECK_THROWS_AS(read_sigma_file(tmp.path / "h.bin"), CorruptHeader);

    // Right magic, wrong plane count.
    {
        auto out = detail::open_out(tmp.path / "two.bin");
        detail::write_raster_header(out, kDepthRawMagic, {2, 2, 2});
        const std::vector<double> planes(8, 1.0);
        detail::write_plane<double>(out, planes);
    }
    CHECK_THROWS_WITH(read_sigma_file(tmp.path / "two.bin"),
                      ContainsSubstring("expected one sigma plane"));

    // Header claims more payload than the file holds.
    {
        auto out = detail::open_out(tmp.path / "short.bin");
        detail::write_raster_header(out, kHeatmapMagic, {2, 3, 4});
        const std::vector<float> five(5, 1.0f);
        detail::write_plane<float>(out, five);
    }
    CHECK_THROWS_AS(read_heatmap_file(tmp.path / "short.bin"), TruncatedFile);

    auto bytes = oracles::read_file_bytes(tmp.path / "h.bin");
    bytes[0] = 'X';
    oracles::write_file_bytes(tmp.path / "h.bin", bytes);
    CHECK_THROWS_WITH(read_heatmap_file(tmp.path / "h.bin"), ContainsSubstring("XEPT"));
}

namespace {

TargetBundle sample_bundle() {
    TargetBundle bundle;
    bundle.depth = SemiDenseDepthTarget(8, 6, 4);
    bundle.depth.depth[bundle.depth.index(1, 1)] = 12.515625;
    bundle.depth.weight[bundle.depth.index(1, 1)] = 1.0;
    bundle.depth.provenance[bundle.depth.index(1, 1)] = Provenance::Original;
    bundle.depth.depth[bundle.depth.index(2, 1)] = 33.3;
    bundle.depth.weight[bundle.depth.index(2, 1)] = 0.25;
    bundle.depth.provenance[bundle.depth.index(2, 1)] = Provenance::Propagated;

    const std::vector<Box2D> boxes = {
        {.class_id = 0, .x_min = 4, .y_min = 4, .x_max = 28, .y_max = 20}};
    bundle.corners = corner_heatmaps(boxes, 4, 8, 6);
    bundle.detection = detection_targets(boxes, 2, 4, 8, 6);

    bundle.meta.frame_id = "000042";
    bundle.meta.image_w = 32;
    bundle.meta.image_h = 24;
    bundle.meta.stride = 4;
    bundle.meta.n_classes = 2;
    return bundle;
}

}  // namespace

TEST_CASE("target bundles survive a disk round trip") {
    oracles::TempDir tmp("bundle");
    const TargetBundle bundle = sample_bundle();
    write_target_bundle(bundle, tmp.path);

    for (const char* name :
         {"depth.png", "depth_raw.bin", "provenance.bin", "corners.bin", "centers.bin",
          "targets.json"})
        CHECK(fs::exists(tmp.path / name));

    const TargetBundle back = read_target_bundle(tmp.path);
    CHECK(back.meta == bundle.meta);
    CHECK(back.depth.depth == bundle.depth.depth);
    CHECK(back.depth.weight == bundle.depth.weight);
    CHECK(back.depth.provenance == bundle.depth.provenance);
    REQUIRE(back.corners.same_shape(bundle.corners));
    for (size_t i = 0; i < back.corners.values.size(); ++i)
        CHECK(back.corners.values[i] ==
              static_cast<double>(static_cast<float>(bundle.corners.values[i])));
    REQUIRE(back.detection.center_heatmaps.same_shape(bundle.detection.center_heatmaps));
    REQUIRE(back.detection.entries.size() == bundle.detection.entries.size());
    for (size_t i = 0; i < back.detection.entries.size(); ++i) {
        const auto& a = back.detection.entries[i];
        const auto& b = bundle.detection.entries[i];
        CHECK(a.class_id == b.class_id);
        CHECK(a.cell_x == b.cell_x);
        CHECK(a.cell_y == b.cell_y);
        CHECK(a.size_w == b.size_w);
        CHECK(a.size_h == b.size_h);
        CHECK(a.offset_x == b.offset_x);
        CHECK(a.offset_y == b.offset_y);
    }

    // The png quantizes supervised cells and leaves the rest at zero.
    const png16::Image img = png16::decode(oracles::read_file_bytes(tmp.path / "depth.png"));
    REQUIRE(img.width == 8);
    REQUIRE(img.height == 6);
    CHECK(img.pixels[1 * 8 + 1] == depth_to_png(12.515625));
    CHECK(img.pixels[1 * 8 + 2] == depth_to_png(33.3));
    CHECK(img.pixels[0] == 0);

    const auto meta = nlohmann::json::parse(oracles::read_file_bytes(tmp.path / "targets.json"));
    CHECK(meta.at("counts").at("original").get<int>() == 1);
    CHECK(meta.at("counts").at("propagated").get<int>() == 1);
    CHECK(meta.at("counts").at("detection_entries").get<size_t>() ==
          bundle.detection.entries.size());
}

TEST_CASE("bundle readers cross-check rasters against the metadata") {
    oracles::TempDir tmp("bundle-bad");
    write_target_bundle(sample_bundle(), tmp.path);

    SECTION("raster dims that disagree with targets.json") {
        write_heatmap_file(tmp.path / "corners.bin", HeatmapSet(4, 5, 6));
        CHECK_THROWS_WITH(read_target_bundle(tmp.path),
                          ContainsSubstring("corners.bin dims disagree"));
    }
    SECTION("an out-of-range provenance code") {
        auto bytes = oracles::read_file_bytes(tmp.path / "provenance.bin");
        bytes[16] = 3;  // first payload byte, after the 16-byte header
        oracles::write_file_bytes(tmp.path / "provenance.bin", bytes);
        CHECK_THROWS_WITH(read_target_bundle(tmp.path), ContainsSubstring("bad code 3"));
    }
    SECTION("a wrong channel count in centers.bin") {
        write_heatmap_file(tmp.path / "centers.bin", HeatmapSet(3, 8, 6));
        CHECK_THROWS_WITH(read_target_bundle(tmp.path),
                          ContainsSubstring("centers.bin dims disagree"));
    }
}

TEST_CASE("dataset walking pairs lidar, calib, dims and boxes by frame id") {
    oracles::TempDir tmp("walk");
    fs::create_directories(tmp.path / "velodyne");
    fs::create_directories(tmp.path / "calib");
    const auto payload = oracles::velodyne_bytes({{1, 2, 3, 0}});
    oracles::write_file_bytes(tmp.path / "velodyne" / "b.bin", payload);
    oracles::write_file_bytes(tmp.path / "velodyne" / "a.bin", payload);
    oracles::write_file_text(tmp.path / "calib" / "a.txt", kCalibText);
    oracles::write_file_text(tmp.path / "calib" / "b.txt", kCalibText);
    oracles::write_file_text(tmp.path / "frames.ndjson",
                             R"({"frame_id":"a","width":100,"height":50})" "\n");

    DetectionSet detections;
    detections.by_frame["b"] = {{.class_id = 0, .x_min = 0, .y_min = 0, .x_max = 5, .y_max = 5}};

    const auto records = walk_dataset(tmp.path, detections, 640, 480);
    REQUIRE(records.size() == 2u);
    CHECK(records[0].frame_id == "a");  // sorted
    CHECK(records[1].frame_id == "b");
    CHECK(records[0].image_w == 100);
    CHECK(records[0].image_h == 50);
    CHECK(records[1].image_w == 640);
    CHECK(records[1].image_h == 480);
    CHECK(records[0].boxes.empty());
    REQUIRE(records[1].boxes.size() == 1u);
    CHECK(records[0].calib_path == tmp.path / "calib" / "a.txt");
    CHECK(records[0].lidar_path == tmp.path / "velodyne" / "a.bin");

    // The convenience overload picks up detections.ndjson itself.
    oracles::write_file_text(tmp.path / "detections.ndjson",
                             R"({"frame_id":"a","class_id":1,"bbox":[1,1,9,9],"score":0.8})" "\n");
    const auto via_file = walk_dataset(tmp.path, 0.3, 640, 480);
    REQUIRE(via_file.size() == 2u);
    REQUIRE(via_file[0].boxes.size() == 1u);
    CHECK(via_file[0].boxes[0].class_id == 1);
    CHECK(via_file[1].boxes.empty());

    CHECK(walk_dataset(tmp.path / "nothing-here", detections, 640, 480).empty());

    oracles::write_file_text(tmp.path / "frames.ndjson", "{broken\n");
    CHECK_THROWS_AS(walk_dataset(tmp.path, detections, 640, 480), ParseError);
}
