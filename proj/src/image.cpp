#include "forensic/image.hpp"

#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "forensic/error.hpp"

namespace forensic {
namespace {

cv::Mat decode(std::string_view bytes) {
    if (bytes.empty()) {
        return {};
    }
    const cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1,
                      const_cast<char*>(bytes.data()));
    try {
        return cv::imdecode(raw, cv::IMREAD_COLOR);
    } catch (const cv::Exception&) {
        return {};
    }
}

cv::Mat decode_or_throw(std::string_view bytes) {
    cv::Mat img = decode(bytes);
    if (img.empty()) {
        throw DataError("image does not decode");
    }
    return img;
}

std::string encode_png(const cv::Mat& img) {
    std::vector<unsigned char> buf;
    if (!cv::imencode(".png", img, buf, {cv::IMWRITE_PNG_COMPRESSION, 6})) {
        throw DataError("PNG encoding failed");
    }
    return std::string(buf.begin(), buf.end());
}

cv::Mat resize(const cv::Mat& img, Dims target) {
    if (img.cols == target.width && img.rows == target.height) {
        return img.clone();
    }
    cv::Mat out;
    cv::resize(img, out, cv::Size(target.width, target.height), 0, 0, cv::INTER_CUBIC);
    return out;
}

}  // namespace

std::optional<Dims> probe_image(std::string_view bytes) {
    const cv::Mat img = decode(bytes);
    if (img.empty()) {
        return std::nullopt;
    }
    return Dims{img.cols, img.rows};
}

std::string sniff_mime(std::string_view bytes) {
    if (bytes.size() >= 8 && bytes.substr(0, 8) == std::string_view("\x89PNG\r\n\x1a\n", 8)) {
        return "image/png";
    }
    if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xFF &&
        static_cast<unsigned char>(bytes[1]) == 0xD8 && static_cast<unsigned char>(bytes[2]) == 0xFF) {
        return "image/jpeg";
    }
    if (bytes.size() >= 12 && bytes.substr(0, 4) == "RIFF" && bytes.substr(8, 4) == "WEBP") {
        return "image/webp";
    }
    return {};
}

std::string extension_for_mime(std::string_view mime) {
    if (mime == "image/png") return "png";
    if (mime == "image/jpeg") return "jpg";
    if (mime == "image/webp") return "webp";
    return "bin";
}

std::string resize_to_png(std::string_view bytes, Dims target) {
    if (target.width < 1 || target.height < 1) {
        throw PreconditionError("resize_to_png: non-positive target");
    }
    return encode_png(resize(decode_or_throw(bytes), target));
}

std::string reencode_png(std::string_view bytes) {
    return encode_png(decode_or_throw(bytes));
}

std::string resample_roundtrip_png(std::string_view bytes) {
    const cv::Mat img = decode_or_throw(bytes);
    const Dims src{img.cols, img.rows};
    const Dims half{std::max(1, (src.width + 1) / 2), std::max(1, (src.height + 1) / 2)};
    return encode_png(resize(resize(img, half), src));
}

double psnr_db(std::string_view a, std::string_view b) {
    const cv::Mat x = decode_or_throw(a);
    const cv::Mat y = decode_or_throw(b);
    if (x.size() != y.size()) {
        throw PreconditionError("psnr_db: size mismatch");
    }
    return cv::PSNR(x, y);
}

bool same_pixels(std::string_view a, std::string_view b) {
    const cv::Mat x = decode_or_throw(a);
    const cv::Mat y = decode_or_throw(b);
    if (x.size() != y.size() || x.type() != y.type()) {
        return false;
    }
    return cv::norm(x, y, cv::NORM_INF) == 0.0;
}

}  // namespace forensic
