#include "data.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "png_io.hpp"
#include "segflow/errors.hpp"

namespace fs = std::filesystem;

namespace segflow {

namespace {

std::string frame_name(int t) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d.png", t);
    return buf;
}

std::string velocities_to_string(const std::vector<std::array<double, 2>>& v) {
    std::ostringstream os;
    os.precision(17);
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) os << ';';
        os << v[i][0] << ',' << v[i][1];
    }
    return os.str();
}

std::vector<std::array<double, 2>> velocities_from_string(const std::string& s) {
    std::vector<std::array<double, 2>> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ';')) {
        const auto comma = item.find(',');
        if (comma == std::string::npos) continue;
        out.push_back({std::stod(item.substr(0, comma)), std::stod(item.substr(comma + 1))});
    }
    return out;
}

}  // namespace

void write_dataset(const std::string& root, const VideoDataset& dataset) {
    const fs::path base = fs::path(root) / "videos";
    std::error_code ec;
    fs::create_directories(base, ec);
    if (ec) throw io_error("cannot create dataset directory: " + base.string());
    for (const Video& v : dataset.videos) {
        if (v.frames.size() < 2)
            throw invalid_input("write_dataset: video '" + v.id + "' has fewer than 2 frames");
        const fs::path vdir = base / v.id;
        fs::create_directories(vdir / "frames", ec);
        if (ec) throw io_error("cannot create directory: " + (vdir / "frames").string());
        for (size_t t = 0; t < v.frames.size(); ++t)
            write_png((vdir / "frames" / frame_name(static_cast<int>(t))).string(), v.frames[t]);
        if (v.has_gt()) {
            fs::create_directories(vdir / "masks", ec);
            if (ec) throw io_error("cannot create directory: " + (vdir / "masks").string());
            for (size_t t = 0; t < v.gt_masks.size(); ++t)
                write_mask_png((vdir / "masks" / frame_name(static_cast<int>(t))).string(),
                               v.gt_masks[t]);
        }
        std::ofstream meta(vdir / "meta");
        if (!meta) throw io_error("cannot write meta file: " + (vdir / "meta").string());
        meta << "seed=" << v.seed << "\n";
        meta << "split=" << (v.split == Split::train ? "train" : "eval") << "\n";
        if (!v.object_velocity.empty())
            meta << "object_velocities=" << velocities_to_string(v.object_velocity) << "\n";
        if (!v.camera_velocity.empty())
            meta << "camera_velocities=" << velocities_to_string(v.camera_velocity) << "\n";
    }
}

VideoDataset read_dataset(const std::string& root) {
    const fs::path base = fs::path(root) / "videos";
    if (!fs::is_directory(base))
        throw io_error("dataset directory not found: " + base.string());
    std::vector<fs::path> vdirs;
    for (const auto& entry : fs::directory_iterator(base))
        if (entry.is_directory()) vdirs.push_back(entry.path());
    std::sort(vdirs.begin(), vdirs.end());
    if (vdirs.empty()) throw io_error("dataset has no videos: " + base.string());

    VideoDataset ds;
    for (const fs::path& vdir : vdirs) {
        Video v;
        v.id = vdir.filename().string();
        const fs::path frames_dir = vdir / "frames";
        if (!fs::is_directory(frames_dir))
            throw io_error("missing frames directory: " + frames_dir.string());
        std::vector<fs::path> frame_files;
        for (const auto& entry : fs::directory_iterator(frames_dir))
            if (entry.path().extension() == ".png") frame_files.push_back(entry.path());
        std::sort(frame_files.begin(), frame_files.end());
        if (frame_files.size() < 2)
            throw io_error("video has fewer than 2 frames: " + frames_dir.string());
        for (const fs::path& f : frame_files) {
            Tensor<float> img = read_png(f.string());
            if (img.dim(0) == 1) {  // promote grayscale to rgb
                Tensor<float> rgb({3, img.dim(1), img.dim(2)});
                for (int c = 0; c < 3; ++c)
                    for (size_t i = 0; i < img.numel(); ++i) rgb[c * img.numel() + i] = img[i];
                img = std::move(rgb);
            }
            if (!v.frames.empty() && !img.same_shape(v.frames.front()))
                throw io_error("frame size differs within video: " + f.string());
            v.frames.push_back(std::move(img));
        }
        const fs::path masks_dir = vdir / "masks";
        if (fs::is_directory(masks_dir)) {
            std::vector<fs::path> mask_files;
            for (const auto& entry : fs::directory_iterator(masks_dir))
                if (entry.path().extension() == ".png") mask_files.push_back(entry.path());
            std::sort(mask_files.begin(), mask_files.end());
            if (mask_files.size() != frame_files.size())
                throw io_error("mask count differs from frame count: " + masks_dir.string());
            for (const fs::path& f : mask_files) v.gt_masks.push_back(read_mask_png(f.string()));
        }
        const fs::path meta_path = vdir / "meta";
        if (fs::exists(meta_path)) {
            std::ifstream meta(meta_path);
            std::string line;
            while (std::getline(meta, line)) {
                const auto eq = line.find('=');
                if (eq == std::string::npos) continue;
                const std::string key = line.substr(0, eq);
                const std::string val = line.substr(eq + 1);
                if (key == "seed") v.seed = std::stoull(val);
                else if (key == "split") v.split = val == "eval" ? Split::eval : Split::train;
                else if (key == "object_velocities") v.object_velocity = velocities_from_string(val);
                else if (key == "camera_velocities") v.camera_velocity = velocities_from_string(val);
            }
        }
        ds.videos.push_back(std::move(v));
    }
    return ds;
}

}  // namespace segflow
