#include "comics/dataset.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "comics/augment.hpp"

namespace comics {

torch::Tensor AnnotatedImage::image() const {
    if (!pixels.defined()) throw std::logic_error("image " + file_name + " has no pixel data");
    return pixels.to(torch::kFloat32).div(255.0);
}

size_t Dataset::face_count() const {
    size_t n = 0;
    for (const auto& im : images) n += im.faces.size();
    return n;
}

size_t Dataset::fake_count() const {
    size_t n = 0;
    for (const auto& im : images)
        for (const auto& f : im.faces) n += f.label == FaceLabel::Fake;
    return n;
}

namespace {

struct Canvas {
    int size;
    std::vector<float> rgb;  // planar [3][size*size]
    float& at(int c, int y, int x) { return rgb[size_t(c) * size_t(size) * size_t(size) + size_t(y) * size_t(size) + size_t(x)]; }
    float at(int c, int y, int x) const {
        return rgb[size_t(c) * size_t(size) * size_t(size) + size_t(y) * size_t(size) + size_t(x)];
    }
    float lum(int y, int x) const { return 0.299f * at(0, y, x) + 0.587f * at(1, y, x) + 0.114f * at(2, y, x); }
};

struct Ellipse {
    double cx, cy, ax, ay;
    double rho(double x, double y) const {
        const double u = (x - cx) / ax, v = (y - cy) / ay;
        return std::sqrt(u * u + v * v);
    }
    Box box() const { return {cx - ax, cy - ay, cx + ax, cy + ay}; }
};

constexpr double kInteriorRadius = 0.8;

std::vector<float> box_blur(const std::vector<float>& src, int w, int h, int r) {
    std::vector<float> out(src.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0;
            int n = 0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
                    s += src[size_t(yy * w + xx)];
                    ++n;
                }
            out[size_t(y * w + x)] = float(s / n);
        }
    return out;
}

// Renders one face onto the canvas. Returns false when a fake face fails the
// interior-contrast self-check.
bool draw_face(Canvas& cv, const Ellipse& e, bool fake, const ToyGenConfig& cfg, Rng& rng, Mask& mask) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    const double r = 0.55 + 0.35 * u(rng);
    const double g = r * (0.65 + 0.2 * u(rng));
    const double b = g * (0.7 + 0.2 * u(rng));
    const std::array<double, 3> base = {r, g, b};
    const double sign = r > 0.75 ? -1.0 : (u(rng) < 0.5 ? -1.0 : 1.0);
    const std::array<double, 3> shift = {sign * cfg.texture_shift, sign * cfg.texture_shift * 0.9,
                                         sign * cfg.texture_shift * (0.6 + 0.4 * u(rng))};

    const int x0 = std::max(0, int(std::floor(e.cx - e.ax))), x1 = std::min(cv.size, int(std::ceil(e.cx + e.ax)) + 1);
    const int y0 = std::max(0, int(std::floor(e.cy - e.ay))), y1 = std::min(cv.size, int(std::ceil(e.cy + e.ay)) + 1);
    const int w = x1 - x0, h = y1 - y0;
    std::vector<float> noise(size_t(w * h));
    for (auto& v : noise) v = float(n(rng));
    const auto smooth = box_blur(noise, w, h, 2);
    const double min_axis = std::min(e.ax, e.ay);

    mask = Mask(cv.size, cv.size);
    double sum_in = 0, sum_ring = 0;
    int n_in = 0, n_ring = 0;
    std::vector<std::array<float, 3>> rendered(size_t(w * h));
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            const double rho = e.rho(x + 0.5, y + 0.5);
            if (rho > 1.0) continue;
            const size_t k = size_t((y - y0) * w + (x - x0));
            const double shade = 1.0 - 0.05 * rho * rho;
            std::array<double, 3> real{}, swapped{};
            for (int c = 0; c < 3; ++c) {
                real[size_t(c)] = base[size_t(c)] * shade + 0.05 * noise[k];
                swapped[size_t(c)] = (base[size_t(c)] + shift[size_t(c)]) * shade + 0.05 * smooth[k];
            }
            double alpha = 0.0;
            if (fake) {
                const double inward = (kInteriorRadius - rho) * min_axis;
                alpha = std::clamp(inward / cfg.blend_width, 0.0, 1.0);
            }
            double lum = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(alpha * swapped[size_t(c)] + (1 - alpha) * real[size_t(c)], 0.0, 1.0);
                rendered[k][size_t(c)] = float(v);
                lum += std::array<double, 3>{0.299, 0.587, 0.114}[size_t(c)] * v;
            }
            if (alpha >= 1.0) {
                sum_in += lum;
                ++n_in;
            } else if (rho > kInteriorRadius) {
                sum_ring += lum;
                ++n_ring;
            }
        }
    if (fake && (n_in == 0 || n_ring == 0 || std::abs(sum_in / n_in - sum_ring / n_ring) <= 0.05)) return false;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            if (e.rho(x + 0.5, y + 0.5) > 1.0) continue;
            const size_t k = size_t((y - y0) * w + (x - x0));
            for (int c = 0; c < 3; ++c) cv.at(c, y, x) = rendered[k][size_t(c)];
            mask.at(y, x) = 1;
        }
    return true;
}

void draw_background(Canvas& cv, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    std::array<double, 3> base{};
    for (auto& v : base) v = 0.15 + 0.6 * u(rng);
    struct Wave {
        double fx, fy, phase, amp;
        int channel;
    };
    std::vector<Wave> waves;
    for (int i = 0; i < 4; ++i)
        waves.push_back({(u(rng) - 0.5) * 0.1, (u(rng) - 0.5) * 0.1, u(rng) * 6.283, 0.04 + 0.06 * u(rng), i % 3});
    for (int y = 0; y < cv.size; ++y)
        for (int x = 0; x < cv.size; ++x) {
            const double shared = 0.02 * n(rng);
            for (int c = 0; c < 3; ++c) {
                double v = base[size_t(c)] + shared;
                for (const auto& w : waves)
                    if (w.channel == c || c == 2) v += w.amp * std::sin(w.fx * x + w.fy * y + w.phase) * (c == 2 ? 0.5 : 1.0);
                cv.at(c, y, x) = float(std::clamp(v, 0.0, 1.0));
            }
        }
}

std::optional<AnnotatedImage> try_generate(const ToyGenConfig& cfg, uint64_t seed, int id) {
    Rng rng(seed);
    const int s = cfg.image_size;
    Canvas canvas{s, std::vector<float>(size_t(3) * size_t(s) * size_t(s))};
    draw_background(canvas, rng);
    const int n_faces = std::uniform_int_distribution<int>(cfg.faces_min, cfg.faces_max)(rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    AnnotatedImage im;
    im.id = id;
    im.height = s;
    im.width = s;
    std::vector<Box> placed;
    for (int f = 0; f < n_faces; ++f) {
        const bool fake = u(rng) < cfg.fake_fraction;
        bool ok = false;
        for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
            const double d = cfg.face_size_min + (cfg.face_size_max - cfg.face_size_min) * u(rng);
            const double ax = d / 2.0;
            const double ay = std::min(ax * (0.85 + 0.3 * u(rng)), s / 2.0 - 2.0);
            if (2 * ax + 2 >= s || 2 * ay + 2 >= s) continue;
            const Ellipse e{ax + 1 + (s - 2 * ax - 2) * u(rng), ay + 1 + (s - 2 * ay - 2) * u(rng), ax, ay};
            const Box b = e.box();
            if (std::any_of(placed.begin(), placed.end(), [&](const Box& p) { return iou(p, b) > 0.1; })) continue;
            // later faces must not cover earlier ones
            if (std::any_of(placed.begin(), placed.end(), [&](const Box& p) { return iou(p, b) > 0.0; })) continue;
            Mask mask;
            if (!draw_face(canvas, e, fake, cfg, rng, mask)) continue;
            const auto bb = mask.bbox();
            if (!bb) continue;
            placed.push_back(b);
            im.faces.push_back(FaceAnnotation{*bb, std::move(mask), fake ? FaceLabel::Fake : FaceLabel::Real, -1});
            ok = true;
        }
        if (!ok) return std::nullopt;
    }
    auto t = torch::from_blob(canvas.rgb.data(), {3, s, s}, torch::kFloat32);
    im.pixels = (t * 255.0).round().clamp(0, 255).to(torch::kUInt8).clone();
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.png", id);
    im.file_name = name;
    return im;
}

}  // namespace

double fake_boundary_contrast(const torch::Tensor& image, const Mask& face, const Mask& interior) {
    const auto lum = (0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]).to(torch::kFloat64).contiguous();
    auto a = lum.accessor<double, 2>();
    double si = 0, sr = 0;
    int ni = 0, nr = 0;
    for (int y = 0; y < face.height; ++y)
        for (int x = 0; x < face.width; ++x) {
            if (!face.at(y, x)) continue;
            if (interior.at(y, x)) {
                si += a[y][x];
                ++ni;
            } else {
                sr += a[y][x];
                ++nr;
            }
        }
    if (ni == 0 || nr == 0) return 0.0;
    return std::abs(si / ni - sr / nr);
}

Dataset generate_toy_dataset(const ToyGenConfig& cfg, int n_images, int first_id) {
    if (cfg.image_size < 64) throw std::invalid_argument("data.image_size must be at least 64");
    if (cfg.faces_min < 1 || cfg.faces_max < cfg.faces_min) throw std::invalid_argument("bad data.faces_min/max");
    if (cfg.fake_fraction < 0 || cfg.fake_fraction > 1) throw std::invalid_argument("data.fake_fraction outside [0,1]");
    Dataset ds;
    for (int i = 0; i < n_images; ++i) {
        const int id = first_id + i;
        std::optional<AnnotatedImage> im;
        for (uint64_t attempt = 0; !im; ++attempt) {
            if (attempt > 1000) throw std::runtime_error("toy generator could not place faces; check face sizes");
            im = try_generate(cfg, derive_seed(cfg.seed, uint64_t(id), attempt), id);
        }
        ds.images.push_back(std::move(*im));
    }
    return ds;
}

// ---------------------------------------------------------------------------

nlohmann::json manifest_to_json(const Dataset& ds) {
    nlohmann::json images = nlohmann::json::array(), anns = nlohmann::json::array();
    int ann_id = 1;
    for (const auto& im : ds.images) {
        images.push_back({{"id", im.id}, {"file_name", im.file_name}, {"height", im.height}, {"width", im.width}});
        for (const auto& f : im.faces) {
            nlohmann::json a = {{"id", ann_id++},
                                {"image_id", im.id},
                                {"category_id", class_index(f.label)},
                                {"bbox", {f.box.x1, f.box.y1, f.box.width(), f.box.height()}},
                                {"area", f.mask.empty() ? f.box.area() : double(f.mask.area())},
                                {"iscrowd", 0}};
            if (!f.mask.empty()) {
                const auto rle = rle_encode(f.mask);
                a["segmentation"] = {{"size", {rle.height, rle.width}}, {"counts", rle.counts}};
            }
            anns.push_back(std::move(a));
        }
    }
    return {{"info", {{"description", "multi-face forgery toy set"}, {"version", 1}}},
            {"images", images},
            {"annotations", anns},
            {"categories", {{{"id", 0}, {"name", "real"}}, {{"id", 1}, {"name", "fake"}}}}};
}

Dataset manifest_from_json(const nlohmann::json& j, const std::string& source) {
    auto fail = [&](const std::string& where, const std::string& what) -> std::runtime_error {
        return std::runtime_error(source + ": " + where + ": " + what);
    };
    if (!j.is_object()) throw fail("root", "expected an object");
    for (const char* key : {"images", "annotations", "categories"})
        if (!j.contains(key) || !j.at(key).is_array()) throw fail("root", std::string("missing array '") + key + "'");
    Dataset ds;
    std::map<int, size_t> by_id;
    const auto& images = j.at("images");
    for (size_t i = 0; i < images.size(); ++i) {
        const auto where = "images[" + std::to_string(i) + "]";
        try {
            AnnotatedImage im;
            im.id = images[i].at("id").get<int>();
            im.file_name = images[i].at("file_name").get<std::string>();
            im.height = images[i].at("height").get<int>();
            im.width = images[i].at("width").get<int>();
            if (by_id.count(im.id)) throw std::runtime_error("duplicate image id " + std::to_string(im.id));
            by_id[im.id] = ds.images.size();
            ds.images.push_back(std::move(im));
        } catch (const nlohmann::json::exception& e) {
            throw fail(where, e.what());
        } catch (const std::runtime_error& e) {
            throw fail(where, e.what());
        }
    }
    const auto& anns = j.at("annotations");
    for (size_t i = 0; i < anns.size(); ++i) {
        const auto where = "annotations[" + std::to_string(i) + "]";
        try {
            const auto& a = anns[i];
            const int image_id = a.at("image_id").get<int>();
            const auto it = by_id.find(image_id);
            if (it == by_id.end()) throw std::runtime_error("unknown image_id " + std::to_string(image_id));
            auto& im = ds.images[it->second];
            const int cat = a.at("category_id").get<int>();
            if (cat != 0 && cat != 1) throw std::runtime_error("unknown category id " + std::to_string(cat));
            const auto bb = a.at("bbox").get<std::vector<double>>();
            if (bb.size() != 4) throw std::runtime_error("bbox must have 4 numbers");
            FaceAnnotation f;
            f.label = static_cast<FaceLabel>(cat);
            f.box = Box{bb[0], bb[1], bb[0] + bb[2], bb[1] + bb[3]};
            if (!f.box.valid()) throw std::runtime_error("degenerate bbox");
            if (a.contains("segmentation")) {
                const auto& s = a.at("segmentation");
                if (s.is_object()) {
                    const auto size = s.at("size").get<std::vector<int>>();
                    if (size.size() != 2) throw std::runtime_error("segmentation.size must be [h, w]");
                    if (!s.at("counts").is_array()) throw std::runtime_error("only uncompressed RLE counts are supported");
                    f.mask = rle_decode(Rle{size[0], size[1], s.at("counts").get<std::vector<uint32_t>>()});
                } else if (s.is_array()) {
                    f.mask = rasterize_polygons(s.get<std::vector<std::vector<double>>>(), im.height, im.width);
                } else {
                    throw std::runtime_error("segmentation must be RLE or polygons");
                }
                if (f.mask.height != im.height || f.mask.width != im.width)
                    throw std::runtime_error("mask size differs from image size");
                if (const auto mb = f.mask.bbox()) {
                    const Box grown{f.box.x1 - 2, f.box.y1 - 2, f.box.x2 + 2, f.box.y2 + 2};
                    if (mb->x1 < grown.x1 || mb->y1 < grown.y1 || mb->x2 > grown.x2 || mb->y2 > grown.y2)
                        throw std::runtime_error("mask extends beyond its bbox");
                }
            }
            im.faces.push_back(std::move(f));
        } catch (const nlohmann::json::exception& e) {
            throw fail(where, e.what());
        } catch (const std::runtime_error& e) {
            throw fail(where, e.what());
        } catch (const std::invalid_argument& e) {
            throw fail(where, e.what());
        }
    }
    return ds;
}

void write_png(const std::filesystem::path& path, const torch::Tensor& pixels) {
    const auto hwc = pixels.to(torch::kUInt8).permute({1, 2, 0}).contiguous();
    cv::Mat rgb(int(hwc.size(0)), int(hwc.size(1)), CV_8UC3, hwc.data_ptr<uint8_t>());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path.string(), bgr)) throw std::runtime_error("cannot write " + path.string());
}

torch::Tensor read_png(const std::filesystem::path& path) {
    const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw std::runtime_error("cannot read image " + path.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).permute({2, 0, 1}).clone();
}

void save_manifest(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    for (const auto& im : ds.images) write_png(dir / "images" / im.file_name, im.pixels);
    std::ofstream os(dir / "annotations.json");
    if (!os) throw std::runtime_error("cannot write " + (dir / "annotations.json").string());
    os << manifest_to_json(ds).dump();
}

Dataset load_manifest(const std::filesystem::path& path) {
    const auto file = std::filesystem::is_directory(path) ? path / "annotations.json" : path;
    std::ifstream is(file);
    if (!is) throw std::runtime_error("cannot open manifest " + file.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(file.string() + ": malformed JSON: " + e.what());
    }
    auto ds = manifest_from_json(j, file.string());
    const auto root = file.parent_path();
    for (auto& im : ds.images) {
        auto p = root / "images" / im.file_name;
        if (!std::filesystem::exists(p)) p = root / im.file_name;
        im.pixels = read_png(p);
        if (im.pixels.size(1) != im.height || im.pixels.size(2) != im.width)
            throw std::runtime_error(file.string() + ": image " + im.file_name + " size differs from manifest");
    }
    return ds;
}

torch::Tensor batch_images(const Dataset& ds, const std::vector<size_t>& indices) {
    std::vector<torch::Tensor> v;
    for (size_t i : indices) v.push_back(ds.images.at(i).image());
    return torch::stack(v);
}

}  // namespace comics
