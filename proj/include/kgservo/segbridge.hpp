//------------------------------------------------------------------------------
//
//   Copyright 2026 The kgservo Authors
//
//   Licensed under the Apache License, Version 2.0 (the "License");
//   you may not use this file except in compliance with the License.
//   You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
//   Unless required by applicable law or agreed to in writing, software
//   distributed under the License is distributed on an "AS IS" BASIS,
//   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
//   See the License for the specific language governing permissions and
//   limitations under the License.
//
//------------------------------------------------------------------------------

#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>

#include "json.hpp"

#include "kgservo/codec.hpp"
#include "kgservo/error.hpp"
#include "kgservo/image.hpp"
#include "kgservo/sim.hpp"

// after Eigen: resolv.h defines _res
#include "httplib.h"

namespace kgservo::segbridge {

/// Client of the segmentation sidecar:
///   POST /segment {"image": b64 PNG, "prompt": text, "threshold"?: real}
///     -> {"mask": b64 gray PNG, "model": text, "latency_ms": int}
///   GET /health -> {"status": "ok", "model": text}
/// One request is in flight at a time.
class SidecarClient
{
public:
  explicit SidecarClient(std::string const &url, int timeout_s = 30)
    : url_(url)
    , client_(std::make_unique<httplib::Client>(url))
  {
    if (!client_->is_valid())
    {
      throw Error(ErrorCode::InvalidArgument, "bad sidecar url '" + url + "'");
    }
    client_->set_connection_timeout(timeout_s, 0);
    client_->set_read_timeout(timeout_s, 0);
  }

  std::string const &url() const noexcept { return url_; }

  nlohmann::json health()
  {
    std::lock_guard lock(mutex_);
    auto            res = client_->Get("/health");
    if (!res)
    {
      throw Error(ErrorCode::SidecarError, "GET /health: " + httplib::to_string(res.error()));
    }
    if (res->status != 200)
    {
      throw Error(ErrorCode::SidecarError, "GET /health: HTTP " + std::to_string(res->status));
    }
    return parse_json(res->body);
  }

  BinaryMask segment(Image const &image, std::string const &prompt, std::optional<double> threshold = std::nullopt)
  {
    if (prompt.empty())
    {
      throw Error(ErrorCode::InvalidArgument, "empty prompt");
    }
    nlohmann::json req{{"image", codec::base64_encode(codec::encode_png(image))}, {"prompt", prompt}};
    if (threshold)
    {
      req["threshold"] = *threshold;
    }
    std::lock_guard lock(mutex_);
    auto            res = client_->Post("/segment", req.dump(), "application/json");
    if (!res)
    {
      throw Error(ErrorCode::SidecarError, "POST /segment: " + httplib::to_string(res.error()));
    }
    if (res->status != 200)
    {
      throw Error(ErrorCode::SidecarError, "POST /segment: HTTP " + std::to_string(res->status) + " " + res->body);
    }
    auto const body = parse_json(res->body);
    if (!body.contains("mask") || !body["mask"].is_string())
    {
      throw Error(ErrorCode::SidecarError, "response lacks a mask");
    }
    Image const mask = codec::decode_png(codec::base64_decode(body["mask"].get<std::string>()));
    if (mask.width != image.width || mask.height != image.height)
    {
      throw Error(ErrorCode::SidecarError, "mask size differs from the request image");
    }
    last_model_ = body.value("model", std::string{});
    return image_to_mask(mask, prompt);
  }

  std::string const &last_model() const noexcept { return last_model_; }

private:
  static nlohmann::json parse_json(std::string const &text)
  {
    try
    {
      return nlohmann::json::parse(text);
    }
    catch (nlohmann::json::exception const &e)
    {
      throw Error(ErrorCode::SidecarError, std::string("malformed JSON: ") + e.what());
    }
  }

  std::string                      url_;
  std::unique_ptr<httplib::Client> client_;
  std::mutex                       mutex_;
  std::string                      last_model_;
};

/// Renders the grayscale frame seen from the camera pose and asks the
/// sidecar for the object mask and for each "<prompt> <part>" mask.
class SidecarMaskSource : public sim::MaskSource
{
public:
  SidecarMaskSource(sim::Scene const &scene, SidecarClient &client)
    : scene_(scene)
    , client_(client)
  {}

  sim::ObjectMasks masks(sim::Transform const &camera_pose, std::string const &prompt,
                         std::set<std::string> const &parts) override
  {
    Image const      frame = sim::render_frame(camera_pose, scene_);
    sim::ObjectMasks out;
    out.whole = client_.segment(frame, prompt);
    for (auto const &part : parts)
    {
      out.parts.emplace(part, client_.segment(frame, prompt + " " + part));
    }
    return out;
  }

private:
  sim::Scene const &scene_;
  SidecarClient    &client_;
};

}  // namespace kgservo::segbridge
