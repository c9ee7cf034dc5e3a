#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace forensic {

struct Dims {
    int width = 0;
    int height = 0;

    long long pixels() const { return static_cast<long long>(width) * height; }
    bool operator==(const Dims&) const = default;
};

// Decodes just far enough to report dimensions; nullopt when undecodable.
std::optional<Dims> probe_image(std::string_view bytes);

// "image/png", "image/jpeg", "image/webp" from magic bytes; empty if unknown.
std::string sniff_mime(std::string_view bytes);
std::string extension_for_mime(std::string_view mime);

// Decode, bicubic-resize to `target`, encode as PNG. Metadata is not carried
// over. Throws DataError when the input does not decode.
std::string resize_to_png(std::string_view bytes, Dims target);

// Decode and re-encode as PNG at the same size (drops EXIF and other chunks).
std::string reencode_png(std::string_view bytes);

// Deterministic pseudo-reconstruction: bicubic downscale to 50% and back up to
// the source size.
std::string resample_roundtrip_png(std::string_view bytes);

// True when both decode to the same size, type and pixel values.
bool same_pixels(std::string_view a, std::string_view b);

// Peak signal-to-noise ratio in dB between two same-size images.
double psnr_db(std::string_view a, std::string_view b);

}  // namespace forensic
